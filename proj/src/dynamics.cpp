#include "phylosim/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "phylosim/errors.hpp"

namespace phylosim {

const char* event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::natural_death: return "natural_death";
    case EventKind::competition_death: return "competition_death";
    case EventKind::natural_birth_clone: return "natural_birth_clone";
    case EventKind::natural_birth_mutant: return "natural_birth_mutant";
    case EventKind::enhanced_birth_clone: return "enhanced_birth_clone";
    case EventKind::enhanced_birth_mutant: return "enhanced_birth_mutant";
  }
  return "unknown";
}

bool is_death(EventKind kind) {
  return kind == EventKind::natural_death || kind == EventKind::competition_death;
}

bool is_birth(EventKind kind) { return !is_death(kind); }

std::string event_log_csv(const std::vector<EventRecord>& events) {
  std::ostringstream out;
  out << "time,kind,clan,mass\n";
  out.precision(12);
  for (const auto& e : events)
    out << e.time << ',' << event_kind_name(e.kind) << ',' << e.clan << ',' << e.mass_after << '\n';
  return out.str();
}

namespace {

double competition_field(const FinitePhylogeny& chi, const GammaFn& gamma, std::size_t pos) {
  if (gamma.is_zero()) return 0.0;
  const auto w = chi.sampling_weights();
  const double m = chi.total_mass();
  double acc = 0.0;
  for (std::size_t x1 = 0; x1 < chi.clan_count(); ++x1)
    acc += w[x1] * gamma(m, chi.phys_dist(x1, pos), chi.trait(x1), chi.trait(pos));
  return acc;
}

}  // namespace

double particle_death_rate(const FinitePhylogeny& chi, const RateModel& model, std::size_t clan_pos) {
  require(!chi.empty(), ErrorCode::zero_mass, "death rate needs a particle");
  return model.beta(chi.trait(clan_pos)) / chi.zeta() + competition_field(chi, model.gamma_death, clan_pos);
}

double particle_birth_rate(const FinitePhylogeny& chi, const RateModel& model, std::size_t clan_pos) {
  require(!chi.empty(), ErrorCode::zero_mass, "birth rate needs a particle");
  return model.beta(chi.trait(clan_pos)) / chi.zeta() + competition_field(chi, model.gamma_birth, clan_pos);
}

TotalRate total_event_rate(const FinitePhylogeny& chi, const RateModel& model) {
  TotalRate out;
  if (chi.empty()) return out;
  const double zeta = chi.zeta();
  for (std::size_t x = 0; x < chi.clan_count(); ++x) {
    const double count = static_cast<double>(chi.count(x));
    out.death_rate += count * particle_death_rate(chi, model, x);
    out.birth_rate += count * particle_birth_rate(chi, model, x);
  }
  out.rate = out.death_rate + out.birth_rate;
  out.yule_birth_cap =
      chi.total_mass() * (model.bounds.beta_bar / (zeta * zeta) + model.bounds.gamma_b_bar / zeta);
  return out;
}

void LineageForest::init_roots(const FinitePhylogeny& chi) {
  all_.clear();
  clan_living_.clear();
  living_total_ = 0;
  for (std::size_t pos = 0; pos < chi.clan_count(); ++pos) {
    const ClanId id = chi.clan_id(pos);
    auto& list = living_slot(id);
    for (long long k = 0; k < chi.count(pos); ++k) {
      Individual ind;
      ind.parent = -1;
      ind.birth_time = 0.0;
      ind.mutations = 0;
      ind.clan = id;
      ind.root = all_.size();
      ind.slot = list.size();
      list.push_back(all_.size());
      all_.push_back(ind);
      ++living_total_;
    }
  }
}

std::vector<std::size_t>& LineageForest::living_slot(ClanId clan) {
  if (clan >= clan_living_.size()) clan_living_.resize(clan + 1);
  return clan_living_[clan];
}

std::size_t LineageForest::pick_member(ClanId clan, RandomStream& rng) const {
  require(clan < clan_living_.size() && !clan_living_[clan].empty(), ErrorCode::precondition_violated,
          "lineage: clan has no living members");
  const auto& list = clan_living_[clan];
  return list[rng.uniform_index(list.size())];
}

std::size_t LineageForest::add_child(std::size_t parent_idx, ClanId child_clan, bool mutant, double time) {
  const Individual& parent = all_[parent_idx];
  require(parent.alive, ErrorCode::precondition_violated, "lineage: parent must be alive");
  Individual ind;
  ind.parent = static_cast<std::int64_t>(parent_idx);
  ind.birth_time = time;
  ind.mutations = parent.mutations + (mutant ? 1 : 0);
  ind.clan = child_clan;
  ind.root = parent.root;
  auto& list = living_slot(child_clan);
  ind.slot = list.size();
  const std::size_t idx = all_.size();
  list.push_back(idx);
  all_.push_back(ind);
  ++living_total_;
  return idx;
}

void LineageForest::kill(std::size_t idx) {
  Individual& ind = all_[idx];
  require(ind.alive, ErrorCode::precondition_violated, "lineage: already dead");
  auto& list = clan_living_[ind.clan];
  const std::size_t slot = ind.slot;
  const std::size_t moved = list.back();
  list[slot] = moved;
  all_[moved].slot = slot;
  list.pop_back();
  ind.alive = false;
  --living_total_;
}

const std::vector<std::size_t>& LineageForest::living_in(ClanId clan) const {
  static const std::vector<std::size_t> kEmpty;
  if (clan >= clan_living_.size()) return kEmpty;
  return clan_living_[clan];
}

std::vector<std::size_t> LineageForest::sample_living(std::size_t k, RandomStream& rng) const {
  require(living_total_ > 0, ErrorCode::zero_mass, "lineage: nobody alive to sample");
  std::vector<std::size_t> pool;
  pool.reserve(static_cast<std::size_t>(living_total_));
  for (const auto& list : clan_living_) pool.insert(pool.end(), list.begin(), list.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = pool[rng.uniform_index(pool.size())];
  return out;
}

double LineageForest::genetic_age(std::size_t idx, double zeta) const {
  return zeta * static_cast<double>(all_[idx].mutations);
}

namespace {

std::vector<std::size_t> ancestor_chain(const std::vector<LineageForest::Individual>& all, std::size_t idx) {
  std::vector<std::size_t> chain;
  std::int64_t cur = static_cast<std::int64_t>(idx);
  while (cur >= 0) {
    chain.push_back(static_cast<std::size_t>(cur));
    cur = all[static_cast<std::size_t>(cur)].parent;
  }
  return chain;
}

}  // namespace

double LineageForest::genealogical_distance(std::size_t a, std::size_t b, double now) const {
  if (a == b) return 0.0;
  const auto ca = ancestor_chain(all_, a);
  const auto cb = ancestor_chain(all_, b);
  std::unordered_set<std::size_t> in_a(ca.begin(), ca.end());
  std::size_t z = all_.size();
  std::size_t zb_pos = 0;
  for (std::size_t i = 0; i < cb.size(); ++i) {
    if (in_a.count(cb[i])) {
      z = cb[i];
      zb_pos = i;
      break;
    }
  }
  if (z == all_.size()) return 2.0 * now;  // disjoint roots: split time 0
  const std::size_t za_pos = static_cast<std::size_t>(std::find(ca.begin(), ca.end(), z) - ca.begin());
  // lineages part at the birth of the first child below the common ancestor
  double split = now;
  bool have = false;
  if (za_pos > 0) {
    split = all_[ca[za_pos - 1]].birth_time;
    have = true;
  }
  if (zb_pos > 0) {
    const double t = all_[cb[zb_pos - 1]].birth_time;
    split = have ? std::min(split, t) : t;
    have = true;
  }
  if (!have) return 0.0;  // a == b == z, unreachable
  return 2.0 * (now - split);
}

LineageForest::PathInfo LineageForest::path_mutations(std::size_t a, std::size_t b) const {
  PathInfo out;
  out.root_a = all_[a].root;
  out.root_b = all_[b].root;
  out.same_root = out.root_a == out.root_b;
  if (!out.same_root) {
    out.mutations = all_[a].mutations + all_[b].mutations;
    return out;
  }
  const auto ca = ancestor_chain(all_, a);
  std::unordered_set<std::size_t> in_a(ca.begin(), ca.end());
  std::int64_t cur = static_cast<std::int64_t>(b);
  while (cur >= 0 && !in_a.count(static_cast<std::size_t>(cur)))
    cur = all_[static_cast<std::size_t>(cur)].parent;
  require(cur >= 0, ErrorCode::precondition_violated, "lineage: same root but no common ancestor");
  const auto& z = all_[static_cast<std::size_t>(cur)];
  out.mutations = all_[a].mutations + all_[b].mutations - 2 * z.mutations;
  return out;
}

Simulation::Simulation(FinitePhylogeny chi0, RateModel model, SimConfig config, RandomStream rng)
    : chi_(std::move(chi0)), model_(std::move(model)), config_(config), rng_(rng) {
  scale_N_ = config_.scale_N;
  if (scale_N_ <= 0) scale_N_ = static_cast<int>(std::max<long long>(1, std::llround(1.0 / chi_.zeta())));
  if (model_.p > 0.0 && model_.mutation.kind == MutationFamily::Kind::rare_jump)
    require(static_cast<double>(scale_N_) > model_.mutation.theta, ErrorCode::precondition_violated,
            "rare_jump kernel needs scale N > theta");
  if (config_.lineage) forest_.init_roots(chi_);
}

std::optional<EventRecord> Simulation::step_until(double cap) {
  require(cap >= time_, ErrorCode::precondition_violated, "step cap behind current time");
  if (chi_.empty()) {  // extinction absorbs
    time_ = cap;
    return std::nullopt;
  }
  const auto out =
      config_.engine == Engine::reference ? step_reference(cap) : step_thinning(cap);
  if (out && config_.validate_every > 0 && events_ % config_.validate_every == 0)
    chi_.validate(&model_.traits);
  return out;
}

std::optional<EventRecord> Simulation::step_reference(double cap) {
  const std::size_t C = chi_.clan_count();
  const double zeta = chi_.zeta();
  // per clan: natural death, competition death, natural birth, enhanced birth
  std::vector<double> weights(4 * C);
  double total = 0.0;
  for (std::size_t x = 0; x < C; ++x) {
    const double count = static_cast<double>(chi_.count(x));
    const double natural = count * model_.beta(chi_.trait(x)) / zeta;
    const double comp_d = count * competition_field(chi_, model_.gamma_death, x);
    const double comp_b = count * competition_field(chi_, model_.gamma_birth, x);
    weights[4 * x + 0] = natural;
    weights[4 * x + 1] = comp_d;
    weights[4 * x + 2] = natural;
    weights[4 * x + 3] = comp_b;
    total += 2.0 * natural + comp_d + comp_b;
  }
  if (total <= 0.0) {
    time_ = cap;
    return std::nullopt;
  }
  const double dt = rng_.exponential(total);
  if (time_ + dt > cap) {
    time_ = cap;
    return std::nullopt;
  }
  time_ += dt;
  const std::size_t idx = rng_.pick_weighted(weights, total);
  const std::size_t pos = idx / 4;
  switch (idx % 4) {
    case 0: return apply_death(pos, EventKind::natural_death);
    case 1: return apply_death(pos, EventKind::competition_death);
    case 2: return apply_birth(pos, /*enhanced=*/false);
    default: return apply_birth(pos, /*enhanced=*/true);
  }
}

std::optional<EventRecord> Simulation::step_thinning(double cap) {
  const double zeta = chi_.zeta();
  for (;;) {
    if (chi_.empty()) {
      time_ = cap;
      return std::nullopt;
    }
    const double n = static_cast<double>(chi_.particle_count());
    const double m = chi_.total_mass();
    const double death_bound = model_.bounds.beta_bar / zeta + model_.death_envelope(m);
    const double birth_bound = model_.bounds.beta_bar / zeta + model_.bounds.gamma_b_bar;
    const double proposal_rate = n * (death_bound + birth_bound);
    const double dt = rng_.exponential(proposal_rate);
    if (time_ + dt > cap) {
      time_ = cap;
      return std::nullopt;
    }
    time_ += dt;
    ++proposals_;
    require(proposals_ <= 64 * config_.max_events, ErrorCode::rate_explosion,
            "proposal count exceeded the explosion guard");

    std::vector<double> counts(chi_.clan_count());
    for (std::size_t x = 0; x < counts.size(); ++x) counts[x] = static_cast<double>(chi_.count(x));
    const std::size_t pos = rng_.pick_weighted(counts, n);

    const bool death = rng_.uniform() * (death_bound + birth_bound) < death_bound;
    if (death) {
      const double natural = model_.beta(chi_.trait(pos)) / zeta;
      const double rate = natural + competition_field(chi_, model_.gamma_death, pos);
      require(rate <= death_bound * (1.0 + 1e-9), ErrorCode::assumption_violated,
              "death rate exceeds its declared bound");
      if (rng_.uniform() * death_bound < rate) {
        const bool is_natural = rng_.uniform() * rate < natural;
        return apply_death(pos, is_natural ? EventKind::natural_death : EventKind::competition_death);
      }
    } else {
      const double natural = model_.beta(chi_.trait(pos)) / zeta;
      const double rate = natural + competition_field(chi_, model_.gamma_birth, pos);
      require(rate <= birth_bound * (1.0 + 1e-9), ErrorCode::assumption_violated,
              "birth rate exceeds its declared bound");
      if (rng_.uniform() * birth_bound < rate) {
        const bool is_natural = rng_.uniform() * rate < natural;
        return apply_birth(pos, !is_natural);
      }
    }
  }
}

EventRecord Simulation::apply_death(std::size_t pos, EventKind kind) {
  const ClanId id = chi_.clan_id(pos);
  if (config_.lineage) forest_.kill(forest_.pick_member(id, rng_));
  chi_.remove_particle(pos);
  ++events_;
  require(events_ <= config_.max_events, ErrorCode::rate_explosion, "event count exceeded the explosion guard");
  return {time_, kind, id, id, chi_.total_mass()};
}

EventRecord Simulation::apply_birth(std::size_t pos, bool enhanced) {
  const ClanId parent_id = chi_.clan_id(pos);
  const Trait kappa = chi_.trait(pos);
  const Trait drawn = mixed_mutation_draw(model_, kappa, scale_N_, rng_);
  const bool mutant = !(drawn == kappa);
  ClanId child_id = parent_id;
  if (mutant) {
    const std::size_t child_pos = chi_.insert_mutant(pos, drawn);
    child_id = chi_.clan_id(child_pos);
  } else {
    chi_.add_particle(pos);
  }
  if (config_.lineage) {
    const std::size_t parent_idx = forest_.pick_member(parent_id, rng_);
    forest_.add_child(parent_idx, child_id, mutant, time_);
  }
  ++events_;
  require(events_ <= config_.max_events, ErrorCode::rate_explosion, "event count exceeded the explosion guard");
  EventKind kind;
  if (enhanced)
    kind = mutant ? EventKind::enhanced_birth_mutant : EventKind::enhanced_birth_clone;
  else
    kind = mutant ? EventKind::natural_birth_mutant : EventKind::natural_birth_clone;
  return {time_, kind, parent_id, child_id, chi_.total_mass()};
}

Trajectory simulate(Simulation& sim, double T, const std::vector<double>& observation_times,
                    const std::function<void(double, const Simulation&)>& on_observe, bool record_events) {
  Trajectory out;
  std::size_t oi = 0;
  while (oi < observation_times.size() && observation_times[oi] < sim.time()) ++oi;
  for (;;) {
    const bool pending_obs = oi < observation_times.size() && observation_times[oi] <= T;
    const double cap = pending_obs ? observation_times[oi] : T;
    const auto ev = sim.step_until(cap);
    if (ev) {
      if (record_events) out.log.push_back(*ev);
      continue;
    }
    if (pending_obs && sim.time() >= observation_times[oi]) {
      if (on_observe) on_observe(observation_times[oi], sim);
      ++oi;
      continue;
    }
    break;  // reached T with no observation pending
  }
  out.end_time = sim.time();
  out.extinct = sim.extinct();
  out.events = sim.event_count();
  return out;
}

std::vector<TraitMass> trait_marginal(const FinitePhylogeny& chi) {
  std::vector<TraitMass> out;
  out.reserve(chi.clan_count());
  for (std::size_t x = 0; x < chi.clan_count(); ++x)
    out.push_back({chi.trait(x), chi.zeta() * static_cast<double>(chi.count(x))});
  return out;
}

std::vector<TraitAgeMass> trait_age_measure(const Simulation& sim, const std::vector<std::size_t>& roots) {
  const LineageForest* forest = sim.lineage();
  require(forest != nullptr, ErrorCode::lineage_disabled, "age measure needs lineage tracking");
  std::unordered_set<std::size_t> filter(roots.begin(), roots.end());
  const double zeta = sim.chi().zeta();
  // aggregate per (clan, mutation count): all such individuals share trait and age
  std::vector<TraitAgeMass> out;
  for (std::size_t pos = 0; pos < sim.chi().clan_count(); ++pos) {
    const ClanId id = sim.chi().clan_id(pos);
    std::vector<std::pair<long long, long long>> groups;  // mutations -> count
    for (std::size_t idx : forest->living_in(id)) {
      const auto& ind = forest->individual(idx);
      if (!filter.empty() && !filter.count(ind.root)) continue;
      bool found = false;
      for (auto& g : groups)
        if (g.first == ind.mutations) {
          ++g.second;
          found = true;
          break;
        }
      if (!found) groups.push_back({ind.mutations, 1});
    }
    for (const auto& g : groups)
      out.push_back({sim.chi().trait(pos), zeta * static_cast<double>(g.first),
                     zeta * static_cast<double>(g.second)});
  }
  return out;
}

namespace {

std::vector<Trait> probe_traits(const TraitSpace& space) {
  std::vector<Trait> out;
  if (space.kind == TraitSpace::Kind::finite) {
    for (int i = 0; i < space.size; ++i) out.push_back(Trait::finite(i));
  } else {
    for (double v : {-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0}) out.push_back(Trait::real(v));
  }
  return out;
}

void check_domination_preconditions(const RateModel& m1, const RateModel& m2, DominationReport& report) {
  auto fail_with = [&](const std::string& msg) {
    report.preconditions_ok = false;
    report.precondition_failures.push_back(msg);
  };
  if (m1.traits.kind != m2.traits.kind || m1.traits.size != m2.traits.size)
    fail_with("trait spaces differ");
  if (m1.p != m2.p) fail_with("mutation probabilities differ");
  const auto& f1 = m1.mutation;
  const auto& f2 = m2.mutation;
  if (f1.kind != f2.kind || f1.sigma != f2.sigma || f1.theta != f2.theta || f1.matrix != f2.matrix)
    fail_with("mutation families differ");
  if (!m2.gamma_birth.depends_only_on_kappa2() || !m2.gamma_death.depends_only_on_kappa2())
    fail_with("dominating kernels must depend only on the affected trait");
  if (!report.preconditions_ok) return;

  const auto traits = probe_traits(m1.traits);
  for (const Trait& t : traits)
    if (std::abs(m1.beta(t) - m2.beta(t)) > 1e-12) {
      fail_with("branching rates differ");
      break;
    }
  const double masses[] = {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
  const double dists[] = {0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
  bool birth_ok = true, death_ok = true;
  for (double m : masses)
    for (double r : dists)
      for (const Trait& k1 : traits)
        for (const Trait& k2 : traits) {
          if (m1.gamma_birth(m, r, k1, k2) > m2.gamma_birth(m, r, k1, k2) + 1e-12) birth_ok = false;
          if (m2.gamma_death(m, r, k1, k2) > m1.gamma_death(m, r, k1, k2) + 1e-12) death_ok = false;
        }
  if (!birth_ok) fail_with("dominating birth enhancement is smaller somewhere");
  if (!death_ok) fail_with("dominating death competition is larger somewhere");
}

}  // namespace

nlohmann::json DominationReport::to_json() const {
  return {{"preconditions_ok", preconditions_ok},
          {"precondition_failures", precondition_failures},
          {"subset_ok", subset_ok},
          {"events", events},
          {"proposals", proposals},
          {"subset_checks", subset_checks},
          {"final_mass1", final_mass1},
          {"final_mass2", final_mass2},
          {"extinct1", extinct1},
          {"extinct2", extinct2}};
}

DominationReport coupled_domination_run(const FinitePhylogeny& chi0, const RateModel& model1,
                                        const RateModel& model2, double T, RandomStream& rng) {
  DominationReport report;
  check_domination_preconditions(model1, model2, report);
  if (!report.preconditions_ok) return report;

  FinitePhylogeny chi = chi0;                       // population 2 (dominating)
  std::vector<long long> sub(chi.clan_count());     // population-1 copies per clan
  for (std::size_t x = 0; x < chi.clan_count(); ++x) sub[x] = chi.count(x);

  const double zeta = chi.zeta();
  const int N = static_cast<int>(std::max<long long>(1, std::llround(1.0 / zeta)));
  if (model1.p > 0.0 && model1.mutation.kind == MutationFamily::Kind::rare_jump)
    require(static_cast<double>(N) > model1.mutation.theta, ErrorCode::precondition_violated,
            "rare_jump kernel needs scale N > theta");
  const double gamma_d_bar = std::max(model1.bounds.gamma_d_bar, model2.bounds.gamma_d_bar);
  const double gamma_b_bar = std::max(model1.bounds.gamma_b_bar, model2.bounds.gamma_b_bar);
  const double beta_bar = std::max(model1.bounds.beta_bar, model2.bounds.beta_bar);

  // competition field for population 1, over its own sub-weights
  const auto field1 = [&](const GammaFn& gamma, std::size_t pos, double mass1) {
    if (gamma.is_zero()) return 0.0;
    double acc = 0.0;
    for (std::size_t x1 = 0; x1 < chi.clan_count(); ++x1) {
      if (sub[x1] == 0) continue;
      const double w = static_cast<double>(sub[x1]) * zeta / mass1;
      acc += w * gamma(mass1, chi.phys_dist(x1, pos), chi.trait(x1), chi.trait(pos));
    }
    return acc;
  };

  const auto subset_check = [&]() {
    ++report.subset_checks;
    for (std::size_t x = 0; x < chi.clan_count(); ++x)
      if (sub[x] < 0 || sub[x] > chi.count(x)) {
        report.subset_ok = false;
        return;
      }
  };

  double time = 0.0;
  const long long proposal_cap = 100'000'000;
  while (!chi.empty()) {
    const double n2 = static_cast<double>(chi.particle_count());
    const double m2 = chi.total_mass();
    const double death_bound = beta_bar / zeta + std::max(1.0, m2) * gamma_d_bar;
    const double birth_bound = beta_bar / zeta + gamma_b_bar;
    const double dt = rng.exponential(n2 * (death_bound + birth_bound));
    if (time + dt > T) break;
    time += dt;
    ++report.proposals;
    require(report.proposals <= proposal_cap, ErrorCode::rate_explosion,
            "domination run exceeded the proposal guard");

    std::vector<double> counts(chi.clan_count());
    for (std::size_t x = 0; x < counts.size(); ++x) counts[x] = static_cast<double>(chi.count(x));
    const std::size_t pos = rng.pick_weighted(counts, n2);
    const bool shared =
        rng.uniform() * static_cast<double>(chi.count(pos)) < static_cast<double>(sub[pos]);
    long long sub_total = 0;
    for (long long s : sub) sub_total += s;
    const double mass1 = zeta * static_cast<double>(sub_total);

    const Trait kappa = chi.trait(pos);
    const double natural = model2.beta(kappa) / zeta;
    const bool death = rng.uniform() * (death_bound + birth_bound) < death_bound;
    if (death) {
      const double d2 = natural + competition_field(chi, model2.gamma_death, pos);
      const double d1 = shared ? natural + field1(model1.gamma_death, pos, mass1) : 0.0;
      require(d2 <= death_bound * (1.0 + 1e-9) && (!shared || d1 <= death_bound * (1.0 + 1e-9)),
              ErrorCode::assumption_violated, "death rate exceeds its declared bound");
      require(!shared || d2 <= d1 * (1.0 + 1e-9) + 1e-12, ErrorCode::assumption_violated,
              "domination order of death rates violated");
      const double u = rng.uniform() * death_bound;
      if (u < d2) {
        if (shared) sub[pos] -= 1;
        if (chi.remove_particle(pos)) sub.erase(sub.begin() + static_cast<std::ptrdiff_t>(pos));
        ++report.events;
        subset_check();
      } else if (shared && u < d1) {
        sub[pos] -= 1;  // population 1 thins alone; the particle stays in 2
        ++report.events;
        subset_check();
      }
    } else {
      const double b2 = natural + competition_field(chi, model2.gamma_birth, pos);
      const double b1 = shared ? natural + field1(model1.gamma_birth, pos, mass1) : 0.0;
      require(b2 <= birth_bound * (1.0 + 1e-9) && (!shared || b1 <= birth_bound * (1.0 + 1e-9)),
              ErrorCode::assumption_violated, "birth rate exceeds its declared bound");
      require(!shared || b1 <= b2 * (1.0 + 1e-9) + 1e-12, ErrorCode::assumption_violated,
              "domination order of birth rates violated");
      const double u = rng.uniform() * birth_bound;
      if (u < b2) {
        const bool child_shared = shared && u < b1;
        const Trait drawn = mixed_mutation_draw(model2, kappa, N, rng);
        if (drawn == kappa) {
          chi.add_particle(pos);
          if (child_shared) sub[pos] += 1;
        } else {
          chi.insert_mutant(pos, drawn);
          sub.push_back(child_shared ? 1 : 0);
        }
        ++report.events;
        subset_check();
      }
    }
  }

  long long sub_total = 0;
  for (long long s : sub) sub_total += s;
  report.final_mass1 = zeta * static_cast<double>(sub_total);
  report.final_mass2 = chi.total_mass();
  report.extinct1 = sub_total == 0;
  report.extinct2 = chi.empty();
  return report;
}

}  // namespace phylosim
