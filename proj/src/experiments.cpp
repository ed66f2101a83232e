#include "phylosim/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "phylosim/errors.hpp"
#include "phylosim/generators.hpp"

namespace phylosim {

int worker_count() {
  if (const char* env = std::getenv("PHYLOSIM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

std::vector<std::vector<double>> run_replicates(
    std::size_t reps, const std::function<std::vector<double>(std::size_t)>& job) {
  std::vector<std::vector<double>> out(reps);
  const int workers = std::min<int>(worker_count(), static_cast<int>(std::max<std::size_t>(reps, 1)));
  if (workers <= 1) {
    for (std::size_t k = 0; k < reps; ++k) out[k] = job(k);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  std::mutex error_lock;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t k = next.fetch_add(1);
        if (k >= reps || failed.load()) return;
        try {
          out[k] = job(k);
        } catch (...) {
          std::lock_guard<std::mutex> guard(error_lock);
          if (!first_error) first_error = std::current_exception();
          failed.store(true);
          return;
        }
      }
    });
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

Summary summarize(const std::vector<double>& xs) {
  Summary s;
  s.count = xs.size();
  if (xs.empty()) return s;
  double acc = 0.0;
  for (double x : xs) acc += x;
  s.mean = acc / static_cast<double>(xs.size());
  if (xs.size() >= 2) {
    double sq = 0.0;
    for (double x : xs) sq += (x - s.mean) * (x - s.mean);
    s.sd = std::sqrt(sq / static_cast<double>(xs.size() - 1));
    s.se = s.sd / std::sqrt(static_cast<double>(xs.size()));
  }
  return s;
}

double quantile(std::vector<double> xs, double q) {
  require(!xs.empty(), ErrorCode::precondition_violated, "quantile of an empty sample");
  std::sort(xs.begin(), xs.end());
  if (xs.size() == 1) return xs[0];
  const double pos = q * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] * (1.0 - frac) + xs[hi] * frac;
}

FinitePhylogeny random_state(const TraitSpace& space, int N, std::size_t clans,
                             long long extra_particles, RandomStream& rng) {
  require(clans >= 1, ErrorCode::precondition_violated, "random_state needs at least one clan");
  const auto draw_trait = [&]() {
    return space.kind == TraitSpace::Kind::finite
               ? Trait::finite(static_cast<int>(rng.uniform_index(static_cast<std::size_t>(space.size))))
               : Trait::real(rng.normal(0.0, 1.0));
  };
  const double unit = 1.0 / static_cast<double>(N);
  FinitePhylogeny chi = FinitePhylogeny::single_clan(unit, unit, 1, draw_trait());
  for (std::size_t c = 1; c < clans; ++c) {
    const std::size_t parent = rng.uniform_index(chi.clan_count());
    Trait t = draw_trait();
    if (space.kind == TraitSpace::Kind::finite)
      while (t == chi.trait(parent)) t = draw_trait();  // distinct neighbour traits keep clans distinct
    chi.insert_mutant(parent, t);
  }
  for (long long e = 0; e < extra_particles; ++e) chi.add_particle(rng.uniform_index(chi.clan_count()));
  return chi;
}

std::vector<TestFunction> standard_battery(const TraitSpace& space) {
  const auto factor = [&](int variant) {
    if (space.kind == TraitSpace::Kind::real) {
      if (variant == 0) return TraitFactor::cosine(1.0, 0.0);
      if (variant == 1) return TraitFactor::cauchy_bump(0.5);
      return TraitFactor::cosine(0.7, 0.4);
    }
    std::vector<double> values(static_cast<std::size_t>(space.size));
    for (std::size_t i = 0; i < values.size(); ++i)
      values[i] = 0.5 + 0.5 * std::cos(0.8 * static_cast<double>(i) + 0.3 * variant);
    return TraitFactor::table(std::move(values));
  };

  std::vector<TestFunction> fns(4);
  fns[0].degree = 0;
  fns[0].g = MassFactor::power_exp(2, 1.0);
  fns[0].name = "mass_only";

  fns[1].degree = 1;
  fns[1].g = MassFactor::power_exp(2, 0.5);
  fns[1].f = {factor(0)};
  fns[1].name = "one_trait";

  fns[2].degree = 2;
  fns[2].g = MassFactor::power_exp(2, 1.0);
  fns[2].phi.lambdas = {0.8};
  fns[2].f = {factor(1), factor(2)};
  fns[2].name = "pair_distance";

  fns[3].degree = 3;
  fns[3].g = MassFactor::power_exp(3, 0.7);
  fns[3].phi.lambdas = {0.5, 0.3, 0.9};
  fns[3].name = "triple_distance";
  for (auto& F : fns) {
    F.check_shape();
    F.check_traits(space);
  }
  return fns;
}

// ---------------------------------------------------------------------------
// Moment bounds

nlohmann::json MomentReport::to_json() const {
  nlohmann::json checks_j = nlohmann::json::array();
  for (const auto& c : checks)
    checks_j.push_back({{"q", c.q},
                        {"bound", c.bound},
                        {"end_mean", c.end_moment.mean},
                        {"end_se", c.end_moment.se},
                        {"sup_mean", c.sup_moment.mean},
                        {"sup_se", c.sup_moment.se},
                        {"ok", c.ok}});
  nlohmann::json escapes_j = nlohmann::json::array();
  for (const auto& e : escapes) escapes_j.push_back({{"m0", e.m0}, {"probability", e.probability}});
  return {{"checks", checks_j}, {"escapes", escapes_j}, {"escape_delta", escape_delta}, {"all_ok", all_ok}};
}

namespace {

struct PathMoments {
  double end_mass = 0.0;
  double sup_mass = 0.0;
};

PathMoments run_mass_path(const FinitePhylogeny& chi0, const RateModel& model, double T,
                          RandomStream& rng) {
  Simulation sim(chi0, model, SimConfig{}, rng);
  PathMoments out;
  out.sup_mass = chi0.total_mass();
  while (auto ev = sim.step_until(T)) out.sup_mass = std::max(out.sup_mass, ev->mass_after);
  out.end_mass = sim.chi().total_mass();
  return out;
}

}  // namespace

MomentReport moment_bound_check(const RateModel& model, double m0, int N, double t,
                                const std::vector<int>& qs, std::size_t reps, std::uint64_t seed,
                                double escape_delta, const std::vector<double>& escape_m0) {
  for (int q : qs)
    require(q >= 1 && q <= 3, ErrorCode::precondition_violated, "moment order must be 1, 2 or 3");
  require(reps >= 2, ErrorCode::precondition_violated, "standard errors need at least two replicates");
  if (!escape_m0.empty())
    require(model.gamma_death.is_zero(), ErrorCode::precondition_violated,
            "escape probes assume no death competition");

  const double unit = 1.0 / static_cast<double>(N);
  const long long count0 = std::llround(m0 * static_cast<double>(N));
  require(count0 >= 1, ErrorCode::precondition_violated, "initial mass below one particle");
  const Trait kappa0 = model.traits.kind == TraitSpace::Kind::finite ? Trait::finite(0) : Trait::real(0.0);
  const FinitePhylogeny chi0 = FinitePhylogeny::single_clan(unit, unit, count0, kappa0);

  const auto rows = run_replicates(reps, [&](std::size_t k) {
    RandomStream rng(seed, static_cast<std::uint64_t>(k));
    const PathMoments pm = run_mass_path(chi0, model, t, rng);
    return std::vector<double>{pm.end_mass, pm.sup_mass};
  });

  MomentReport report;
  report.escape_delta = escape_delta;
  report.all_ok = true;
  const double growth = 2.0 * model.bounds.beta_bar + model.bounds.gamma_b_bar;
  for (int q : qs) {
    std::vector<double> end_q(reps), sup_q(reps);
    for (std::size_t k = 0; k < reps; ++k) {
      end_q[k] = std::pow(rows[k][0], q);
      sup_q[k] = std::pow(rows[k][1], q);
    }
    MomentCheck check;
    check.q = q;
    const double cq = std::pow(2.0, q) - 1.0;
    check.bound = (1.0 + std::pow(chi0.total_mass(), q)) * std::exp(cq * growth * t);
    check.end_moment = summarize(end_q);
    check.sup_moment = summarize(sup_q);
    check.ok = check.end_moment.mean + 3.5 * check.end_moment.se <= check.bound;
    report.all_ok = report.all_ok && check.ok;
    report.checks.push_back(check);
  }

  for (std::size_t i = 0; i < escape_m0.size(); ++i) {
    const double em0 = escape_m0[i];
    const long long ec = std::llround(em0 * static_cast<double>(N));
    require(ec >= 1, ErrorCode::precondition_violated, "escape probe mass below one particle");
    const FinitePhylogeny echi = FinitePhylogeny::single_clan(unit, unit, ec, kappa0);
    const auto erows = run_replicates(reps, [&](std::size_t k) {
      RandomStream rng(seed, (i + 1) * 1'000'000 + static_cast<std::uint64_t>(k));
      const PathMoments pm = run_mass_path(echi, model, t, rng);
      return std::vector<double>{pm.sup_mass >= escape_delta ? 1.0 : 0.0};
    });
    double hits = 0.0;
    for (const auto& r : erows) hits += r[0];
    report.escapes.push_back({em0, hits / static_cast<double>(reps)});
  }
  return report;
}

// ---------------------------------------------------------------------------
// Martingale residuals

nlohmann::json ResidualReport::to_json() const {
  nlohmann::json series_j = nlohmann::json::array();
  for (const auto& s : series) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : s.points)
      pts.push_back({{"time", p.time}, {"residual", p.residual}, {"se", p.se}, {"ratio", p.ratio}});
    series_j.push_back({{"function", s.function}, {"max_ratio", s.max_ratio}, {"points", pts}});
  }
  return {{"mode", mode == ResidualMode::discrete ? "discrete" : "limit"},
          {"replicates", replicates},
          {"max_ratio", max_ratio},
          {"series", series_j}};
}

std::string ResidualReport::to_csv() const {
  std::ostringstream out;
  out << "function,time,residual,se,ratio\n";
  out.precision(12);
  for (const auto& s : series)
    for (const auto& p : s.points)
      out << s.function << ',' << p.time << ',' << p.residual << ',' << p.se << ',' << p.ratio << '\n';
  return out.str();
}

ResidualReport martingale_residual(const FinitePhylogeny& chi0, const RateModel& model,
                                   const std::vector<TestFunction>& fns, ResidualMode mode,
                                   const std::vector<double>& grid, std::size_t reps,
                                   std::uint64_t seed, const SimConfig& sim_config) {
  require(!fns.empty(), ErrorCode::precondition_violated, "residual check needs test functions");
  require(!grid.empty(), ErrorCode::precondition_violated, "residual check needs observation times");
  require(reps >= 2, ErrorCode::precondition_violated, "standard errors need at least two replicates");
  for (std::size_t i = 0; i < grid.size(); ++i)
    require(grid[i] > 0.0 && (i == 0 || grid[i] > grid[i - 1]), ErrorCode::precondition_violated,
            "observation grid must be positive and ascending");
  for (const auto& F : fns) {
    const CertifyReport cert = certify_tilde(F, model.bounds.gamma_d_bar);
    require(cert.ok, ErrorCode::uncertified_function,
            "residual check requires certified test functions: " +
                (cert.failures.empty() ? F.name : cert.failures.front()));
  }

  const std::size_t nf = fns.size();
  const std::size_t nt = grid.size();
  const int N = sim_config.scale_N > 0
                    ? sim_config.scale_N
                    : static_cast<int>(std::max<long long>(1, std::llround(1.0 / chi0.zeta())));

  std::vector<double> f0(nf);
  for (std::size_t f = 0; f < nf; ++f) f0[f] = evaluate(fns[f], chi0).value;

  const auto generator_at = [&](const FinitePhylogeny& chi, const TestFunction& F) {
    if (mode == ResidualMode::discrete) return omega_discrete(chi, F, model, N).value;
    return omega_limit(chi, F, model).total();
  };

  const auto rows = run_replicates(reps, [&](std::size_t k) {
    RandomStream rng(seed, static_cast<std::uint64_t>(k));
    Simulation sim(chi0, model, sim_config, rng);
    std::vector<double> integral(nf, 0.0), omega(nf), out(nf * nt);
    for (std::size_t f = 0; f < nf; ++f) omega[f] = generator_at(chi0, fns[f]);
    std::size_t oi = 0;
    while (oi < nt) {
      const double t0 = sim.time();
      const auto ev = sim.step_until(grid[oi]);
      const double dt = sim.time() - t0;
      for (std::size_t f = 0; f < nf; ++f) integral[f] += omega[f] * dt;
      if (ev) {
        for (std::size_t f = 0; f < nf; ++f) omega[f] = generator_at(sim.chi(), fns[f]);
        continue;
      }
      for (std::size_t f = 0; f < nf; ++f)
        out[f * nt + oi] = evaluate(fns[f], sim.chi()).value - f0[f] - integral[f];
      ++oi;
    }
    return out;
  });

  ResidualReport report;
  report.mode = mode;
  report.replicates = reps;
  for (std::size_t f = 0; f < nf; ++f) {
    ResidualSeries series;
    series.function = fns[f].name.empty() ? "F" + std::to_string(f) : fns[f].name;
    for (std::size_t t = 0; t < nt; ++t) {
      std::vector<double> col(reps);
      for (std::size_t k = 0; k < reps; ++k) col[k] = rows[k][f * nt + t];
      const Summary s = summarize(col);
      ResidualPoint p;
      p.time = grid[t];
      p.residual = s.mean;
      p.se = s.se;
      p.ratio = s.se > 0.0 ? std::abs(s.mean) / s.se : (s.mean == 0.0 ? 0.0 : INFINITY);
      series.max_ratio = std::max(series.max_ratio, p.ratio);
      series.points.push_back(p);
    }
    report.max_ratio = std::max(report.max_ratio, series.max_ratio);
    report.series.push_back(std::move(series));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Trajectory statistics

nlohmann::json StatSeries::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (std::size_t t = 0; t < times.size(); ++t) {
    nlohmann::json row{{"time", times[t]}};
    for (std::size_t s = 0; s < names.size(); ++s) {
      row[names[s]] = rows[t][s].mean;
      row[names[s] + "_se"] = rows[t][s].se;
    }
    rows_j.push_back(row);
  }
  return {{"statistics", names}, {"rows", rows_j}};
}

std::string StatSeries::to_csv() const {
  std::ostringstream out;
  out << "time,statistic,mean,se\n";
  out.precision(12);
  for (std::size_t t = 0; t < times.size(); ++t)
    for (std::size_t s = 0; s < names.size(); ++s)
      out << times[t] << ',' << names[s] << ',' << rows[t][s].mean << ',' << rows[t][s].se << '\n';
  return out.str();
}

namespace {

struct StatLayout {
  std::vector<std::string> names;
  std::size_t cover_base = 0;  // index of the first covering statistic
  bool lineage = false;
};

StatLayout stat_layout(const SeriesSpec& spec) {
  StatLayout layout;
  layout.lineage = spec.sim_config.lineage;
  layout.names = {"mass", "mass_q2", "mass_q3", "clans", "strains", "dominant_share", "diameter", "extinct"};
  layout.cover_base = layout.names.size();
  for (double eps : spec.eps_grid) {
    std::ostringstream name;
    name << "cover_" << eps;
    layout.names.push_back(name.str());
  }
  layout.names.push_back("trait_mean");
  layout.names.push_back("trait_sd");
  if (layout.lineage) {
    layout.names.push_back("age_q25");
    layout.names.push_back("age_q50");
    layout.names.push_back("age_q75");
    layout.names.push_back("genetic_mean");
    layout.names.push_back("genealogical_mean");
    layout.names.push_back("gen_geo_corr");
  }
  return layout;
}

double trait_coordinate(const Trait& t) {
  return t.is_real() ? t.value() : static_cast<double>(t.index());
}

void observe_state(const Simulation& sim, const FinitePhylogeny& chi0, const SeriesSpec& spec,
                   const StatLayout& layout, RandomStream& rng, std::vector<double>& out) {
  const FinitePhylogeny& chi = sim.chi();
  out.assign(layout.names.size(), 0.0);
  if (chi.empty()) {
    out[7] = 1.0;  // extinct flag
    return;
  }
  const double m = chi.total_mass();
  out[0] = m;
  out[1] = m * m;
  out[2] = m * m * m;
  out[3] = static_cast<double>(chi.clan_count());
  double dominant = 0.0;
  double strains = 0.0;
  for (std::size_t x = 0; x < chi.clan_count(); ++x) {
    const double share = chi.zeta() * static_cast<double>(chi.count(x)) / m;
    dominant = std::max(dominant, share);
    if (share >= spec.strain_threshold) strains += 1.0;
  }
  out[4] = strains;
  out[5] = dominant;
  out[6] = chi.diameter();
  for (std::size_t e = 0; e < spec.eps_grid.size(); ++e)
    out[layout.cover_base + e] = static_cast<double>(covering_number(chi, spec.eps_grid[e]).count);

  double tmean = 0.0, tsq = 0.0;
  for (std::size_t x = 0; x < chi.clan_count(); ++x) {
    const double w = static_cast<double>(chi.count(x)) / static_cast<double>(chi.particle_count());
    const double v = trait_coordinate(chi.trait(x));
    tmean += w * v;
    tsq += w * v * v;
  }
  std::size_t s = layout.cover_base + spec.eps_grid.size();
  out[s++] = tmean;
  out[s++] = std::sqrt(std::max(0.0, tsq - tmean * tmean));

  if (!layout.lineage) return;
  const LineageForest* forest = sim.lineage();
  std::vector<double> ages;
  for (std::size_t x = 0; x < chi.clan_count(); ++x)
    for (std::size_t idx : forest->living_in(chi.clan_id(x)))
      ages.push_back(forest->genetic_age(idx, chi.zeta()));
  out[s++] = quantile(ages, 0.25);
  out[s++] = quantile(ages, 0.50);
  out[s++] = quantile(ages, 0.75);

  // genetic vs genealogical distance over sampled living pairs
  std::vector<double> gen, geo;
  const auto pairs = forest->sample_living(2 * spec.pair_samples, rng);
  for (std::size_t i = 0; i + 1 < pairs.size(); i += 2) {
    const std::size_t a = pairs[i], b = pairs[i + 1];
    if (a == b) continue;
    const auto path = forest->path_mutations(a, b);
    double r = chi.ell() * static_cast<double>(path.mutations);
    if (!path.same_root) {
      const auto pa = chi0.find_clan(forest->individual(path.root_a).clan);
      const auto pb = chi0.find_clan(forest->individual(path.root_b).clan);
      require(pa && pb, ErrorCode::precondition_violated, "root clan missing from the initial state");
      r += chi0.phys_dist(*pa, *pb);
    }
    gen.push_back(r);
    geo.push_back(forest->genealogical_distance(a, b, sim.time()));
  }
  double gm = 0.0, qm = 0.0;
  for (double v : gen) gm += v;
  for (double v : geo) qm += v;
  const double np = gen.empty() ? 1.0 : static_cast<double>(gen.size());
  gm /= np;
  qm /= np;
  out[s++] = gm;
  out[s++] = qm;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    sxx += (gen[i] - gm) * (gen[i] - gm);
    syy += (geo[i] - qm) * (geo[i] - qm);
    sxy += (gen[i] - gm) * (geo[i] - qm);
  }
  out[s++] = (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : 0.0;
}

}  // namespace

StatSeries trajectory_statistics(const FinitePhylogeny& chi0, const RateModel& model,
                                 const SeriesSpec& spec) {
  require(!spec.grid.empty(), ErrorCode::precondition_violated, "statistics need observation times");
  require(spec.reps >= 2, ErrorCode::precondition_violated, "standard errors need at least two replicates");
  const StatLayout layout = stat_layout(spec);
  const std::size_t ns = layout.names.size();
  const std::size_t nt = spec.grid.size();

  const auto rows = run_replicates(spec.reps, [&](std::size_t k) {
    RandomStream rng(spec.seed, static_cast<std::uint64_t>(k));
    RandomStream stat_rng = rng.split(0x5741);  // keeps pair sampling off the event stream
    Simulation sim(chi0, model, spec.sim_config, rng);
    std::vector<double> out(ns * nt, 0.0), point;
    std::size_t oi = 0;
    simulate(sim, spec.grid.back(), spec.grid, [&](double, const Simulation& s) {
      observe_state(s, chi0, spec, layout, stat_rng, point);
      std::copy(point.begin(), point.end(), out.begin() + static_cast<std::ptrdiff_t>(ns * oi));
      ++oi;
    });
    return out;
  });

  StatSeries series;
  series.names = layout.names;
  series.times = spec.grid;
  series.rows.resize(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    series.rows[t].resize(ns);
    std::vector<double> col(spec.reps);
    for (std::size_t s = 0; s < ns; ++s) {
      for (std::size_t k = 0; k < spec.reps; ++k) col[k] = rows[k][ns * t + s];
      series.rows[t][s] = summarize(col);
    }
  }
  return series;
}

nlohmann::json PatternReport::to_json() const {
  return {{"label", label},
          {"extinct_fraction", extinct_fraction},
          {"dominant_share", dominant_share},
          {"strain_count", strain_count},
          {"series", series.to_json()}};
}

PatternReport phylo_patterns(const FinitePhylogeny& chi0, const RateModel& model,
                             const SeriesSpec& spec) {
  PatternReport report;
  report.series = trajectory_statistics(chi0, model, spec);
  const auto stat_at = [&](std::size_t t, const std::string& name) {
    for (std::size_t s = 0; s < report.series.names.size(); ++s)
      if (report.series.names[s] == name) return report.series.rows[t][s].mean;
    fail(ErrorCode::precondition_violated, "unknown statistic " + name);
  };
  const std::size_t last = report.series.times.size() - 1;
  const std::size_t mid = last / 2;
  report.extinct_fraction = stat_at(last, "extinct");
  report.dominant_share = stat_at(last, "dominant_share");
  report.strain_count = stat_at(last, "strains");
  if (report.extinct_fraction > 0.5)
    report.label = "extinct";
  else if (report.dominant_share > 0.8)
    report.label = "a";
  else if (report.strain_count <= 10.0)
    report.label = "b";
  else if (report.strain_count > 1.5 * stat_at(mid, "strains"))
    report.label = "d";
  else
    report.label = "c";
  return report;
}

// ---------------------------------------------------------------------------
// Compact containment probe

nlohmann::json ContainmentReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& c : constants)
    rows.push_back({{"k", c.k},
                    {"eps", c.eps},
                    {"mass_cap", c.mass_cap},
                    {"trait_radius", c.trait_radius},
                    {"core_diameter", c.core_diameter},
                    {"core_covering", c.core_covering},
                    {"containment_probability", c.containment_probability},
                    {"target_probability", c.target_probability}});
  return {{"N", N}, {"eps0", eps0}, {"constants", rows}};
}

namespace {

// Clan positions left after greedily peeling diameter endpoints whose mass
// share fits in the eps budget.
std::vector<std::size_t> core_positions(const FinitePhylogeny& chi, double eps) {
  std::vector<std::size_t> kept(chi.clan_count());
  for (std::size_t i = 0; i < kept.size(); ++i) kept[i] = i;
  double budget = eps * chi.total_mass();
  while (kept.size() > 1) {
    double best = -1.0;
    std::size_t bi = 0, bj = 0;
    for (std::size_t a = 0; a < kept.size(); ++a)
      for (std::size_t b = a + 1; b < kept.size(); ++b) {
        const double d = chi.phys_dist(kept[a], kept[b]);
        if (d > best) {
          best = d;
          bi = a;
          bj = b;
        }
      }
    if (best <= 0.0) break;
    const double mass_i = chi.zeta() * static_cast<double>(chi.count(kept[bi]));
    const double mass_j = chi.zeta() * static_cast<double>(chi.count(kept[bj]));
    const std::size_t drop = mass_i <= mass_j ? bi : bj;
    const double cost = std::min(mass_i, mass_j);
    if (cost > budget) break;
    budget -= cost;
    kept.erase(kept.begin() + static_cast<std::ptrdiff_t>(drop));
  }
  return kept;
}

FinitePhylogeny sub_state(const FinitePhylogeny& chi, const std::vector<std::size_t>& kept) {
  FinitePhylogeny out =
      FinitePhylogeny::single_clan(chi.ell(), chi.zeta(), chi.count(kept[0]), chi.trait(kept[0]));
  for (std::size_t i = 1; i < kept.size(); ++i) {
    std::vector<long long> row(i);
    for (std::size_t j = 0; j < i; ++j) row[j] = chi.unit_dist(kept[i], kept[j]);
    out.merge_or_insert(row, chi.trait(kept[i]), chi.count(kept[i]));
  }
  return out;
}

double trait_escape_radius(const FinitePhylogeny& chi, double eps) {
  if (chi.empty()) return 0.0;
  if (!chi.trait(0).is_real()) return 0.0;  // finite trait spaces are compact as is
  std::vector<std::pair<double, double>> abs_mass;  // |kappa|, clan mass
  for (std::size_t x = 0; x < chi.clan_count(); ++x)
    abs_mass.push_back({std::abs(chi.trait(x).value()), chi.zeta() * static_cast<double>(chi.count(x))});
  std::sort(abs_mass.begin(), abs_mass.end());
  double budget = eps * chi.total_mass();
  std::size_t keep = abs_mass.size();
  while (keep > 1 && abs_mass[keep - 1].second <= budget) {
    budget -= abs_mass[keep - 1].second;
    --keep;
  }
  return abs_mass[keep - 1].first;
}

}  // namespace

ContainmentReport compact_containment_probe(const FinitePhylogeny& chi0, const RateModel& model,
                                            int N, double T, const std::vector<double>& grid,
                                            int k_max, double eps0, std::size_t reps,
                                            std::uint64_t seed) {
  require(k_max >= 0, ErrorCode::precondition_violated, "containment probe needs k_max >= 0");
  require(!grid.empty(), ErrorCode::precondition_violated, "containment probe needs observation times");
  const std::size_t nk = static_cast<std::size_t>(k_max) + 1;
  // per replicate: sup mass, then (trait radius, core diameter, core covering) per k
  const auto rows = run_replicates(reps, [&](std::size_t rep) {
    RandomStream rng(seed, static_cast<std::uint64_t>(rep));
    SimConfig cfg;
    cfg.scale_N = N;
    Simulation sim(chi0, model, cfg, rng);
    std::vector<double> out(1 + 3 * nk, 0.0);
    out[0] = chi0.total_mass();
    simulate(sim, T, grid, [&](double, const Simulation& s) {
      const FinitePhylogeny& chi = s.chi();
      out[0] = std::max(out[0], chi.total_mass());
      if (chi.empty()) return;
      for (std::size_t k = 0; k < nk; ++k) {
        const double eps = std::pow(2.0, -static_cast<double>(k));
        const auto kept = core_positions(chi, eps);
        const FinitePhylogeny core = sub_state(chi, kept);
        out[1 + 3 * k] = std::max(out[1 + 3 * k], trait_escape_radius(chi, eps));
        out[2 + 3 * k] = std::max(out[2 + 3 * k], core.diameter());
        out[3 + 3 * k] =
            std::max(out[3 + 3 * k], static_cast<double>(covering_number(core, eps).count));
      }
    });
    return out;
  });

  ContainmentReport report;
  report.N = N;
  report.eps0 = eps0;
  std::vector<double> sup_mass(reps);
  for (std::size_t r = 0; r < reps; ++r) sup_mass[r] = rows[r][0];
  const double mass_cap = quantile(sup_mass, 0.95);
  for (std::size_t k = 0; k < nk; ++k) {
    ContainmentConstants c;
    c.k = static_cast<int>(k);
    c.eps = std::pow(2.0, -static_cast<double>(k));
    c.mass_cap = mass_cap;
    std::vector<double> kr(reps), lr(reps), nr(reps);
    for (std::size_t r = 0; r < reps; ++r) {
      kr[r] = rows[r][1 + 3 * k];
      lr[r] = rows[r][2 + 3 * k];
      nr[r] = rows[r][3 + 3 * k];
    }
    c.trait_radius = quantile(kr, 0.95);
    c.core_diameter = quantile(lr, 0.95);
    c.core_covering = quantile(nr, 0.95);
    std::size_t contained = 0;
    for (std::size_t r = 0; r < reps; ++r)
      if (sup_mass[r] <= c.mass_cap + 1e-12 && kr[r] <= c.trait_radius + 1e-12 &&
          lr[r] <= c.core_diameter + 1e-12 && nr[r] <= c.core_covering + 1e-12)
        ++contained;
    c.containment_probability = static_cast<double>(contained) / static_cast<double>(reps);
    c.target_probability = 1.0 - eps0 * c.eps;
    report.constants.push_back(c);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Engine equivalence and domination ensembles

nlohmann::json EnsembleStats::to_json() const {
  nlohmann::json stats_j = nlohmann::json::array();
  for (std::size_t i = 0; i < names.size(); ++i)
    stats_j.push_back({{"name", names[i]}, {"mean", stats[i].mean}, {"se", stats[i].se}});
  return {{"statistics", stats_j}, {"extinct_fraction", extinct_fraction}};
}

EnsembleStats ensemble_at_horizon(const FinitePhylogeny& chi0, const RateModel& model, double T,
                                  Engine engine, double eps, double strain_threshold,
                                  std::size_t reps, std::uint64_t seed) {
  require(reps >= 2, ErrorCode::precondition_violated, "standard errors need at least two replicates");
  const auto rows = run_replicates(reps, [&](std::size_t k) {
    RandomStream rng(seed, static_cast<std::uint64_t>(k));
    SimConfig cfg;
    cfg.engine = engine;
    Simulation sim(chi0, model, cfg, rng);
    while (sim.step_until(T)) {
    }
    const FinitePhylogeny& chi = sim.chi();
    std::vector<double> out(6, 0.0);
    out[5] = chi.empty() ? 1.0 : 0.0;
    if (chi.empty()) return out;
    out[0] = chi.total_mass();
    out[1] = static_cast<double>(chi.clan_count());
    out[2] = chi.diameter();
    out[3] = static_cast<double>(covering_number(chi, eps).count);
    for (std::size_t x = 0; x < chi.clan_count(); ++x)
      if (chi.zeta() * static_cast<double>(chi.count(x)) / chi.total_mass() >= strain_threshold)
        out[4] += 1.0;
    return out;
  });

  EnsembleStats stats;
  stats.names = {"mass", "clans", "diameter", "covering", "strains"};
  std::vector<double> col(reps);
  for (std::size_t s = 0; s < stats.names.size(); ++s) {
    for (std::size_t k = 0; k < reps; ++k) col[k] = rows[k][s];
    stats.stats.push_back(summarize(col));
  }
  double ext = 0.0;
  for (std::size_t k = 0; k < reps; ++k) ext += rows[k][5];
  stats.extinct_fraction = ext / static_cast<double>(reps);
  return stats;
}

nlohmann::json DominationEnsemble::to_json() const {
  return {{"runs", runs},
          {"subset_failures", subset_failures},
          {"precondition_failures", precondition_failures},
          {"first_failure_messages", first_failure_messages},
          {"mean_mass1", mean_mass1},
          {"mean_mass2", mean_mass2}};
}

DominationEnsemble domination_ensemble(const FinitePhylogeny& chi0, const RateModel& model1,
                                       const RateModel& model2, double T, std::size_t reps,
                                       std::uint64_t seed) {
  DominationEnsemble out;
  out.runs = reps;
  double mass1 = 0.0, mass2 = 0.0;
  for (std::size_t k = 0; k < reps; ++k) {
    RandomStream rng(seed, static_cast<std::uint64_t>(k));
    const DominationReport report = coupled_domination_run(chi0, model1, model2, T, rng);
    if (!report.preconditions_ok) {
      ++out.precondition_failures;
      if (out.first_failure_messages.empty()) out.first_failure_messages = report.precondition_failures;
      continue;
    }
    if (!report.subset_ok) ++out.subset_failures;
    mass1 += report.final_mass1;
    mass2 += report.final_mass2;
  }
  const double n = static_cast<double>(reps == 0 ? 1 : reps);
  out.mean_mass1 = mass1 / n;
  out.mean_mass2 = mass2 / n;
  return out;
}

}  // namespace phylosim
