#include "phylosim/phylogeny.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace phylosim {

FinitePhylogeny::FinitePhylogeny(double ell, double zeta) : ell_{ell}, zeta_{zeta} {
  require(ell > 0.0 && zeta > 0.0, ErrorCode::config_error, "phylogeny: ell and zeta must be positive");
}

FinitePhylogeny FinitePhylogeny::single_clan(double ell, double zeta, long long count, Trait trait) {
  FinitePhylogeny chi{ell, zeta};
  require(count >= 1, ErrorCode::config_error, "phylogeny: clan count must be positive");
  chi.counts_.push_back(count);
  chi.traits_.push_back(trait);
  chi.dist_.push_back(0);
  chi.ids_.push_back(chi.next_id_++);
  return chi;
}

std::optional<std::size_t> FinitePhylogeny::find_clan(ClanId id) const {
  for (std::size_t i = 0; i < ids_.size(); ++i)
    if (ids_[i] == id) return i;
  return std::nullopt;
}

long long FinitePhylogeny::particle_count() const {
  return std::accumulate(counts_.begin(), counts_.end(), 0LL);
}

double FinitePhylogeny::diameter() const {
  long long best = 0;
  const std::size_t c = clan_count();
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = i + 1; j < c; ++j) best = std::max(best, unit_dist(i, j));
  return ell_ * static_cast<double>(best);
}

std::vector<double> FinitePhylogeny::sampling_weights() const {
  const long long total = particle_count();
  require(total > 0, ErrorCode::zero_mass, "sampling_weights: state carries no mass");
  std::vector<double> w(clan_count());
  for (std::size_t i = 0; i < w.size(); ++i)
    w[i] = static_cast<double>(counts_[i]) / static_cast<double>(total);
  return w;
}

bool FinitePhylogeny::remove_particle(std::size_t pos) {
  require(pos < counts_.size(), ErrorCode::index_out_of_range, "remove_particle: bad clan position");
  if (--counts_[pos] > 0) return false;

  const std::size_t c = counts_.size();
  std::vector<long long> nd((c - 1) * (c - 1));
  for (std::size_t i = 0, ni = 0; i < c; ++i) {
    if (i == pos) continue;
    for (std::size_t j = 0, nj = 0; j < c; ++j) {
      if (j == pos) continue;
      nd[ni * (c - 1) + nj] = dist_[i * c + j];
      ++nj;
    }
    ++ni;
  }
  dist_ = std::move(nd);
  counts_.erase(counts_.begin() + pos);
  traits_.erase(traits_.begin() + pos);
  ids_.erase(ids_.begin() + pos);
  return true;
}

std::size_t FinitePhylogeny::insert_mutant(std::size_t parent_pos, Trait trait) {
  require(parent_pos < counts_.size(), ErrorCode::index_out_of_range, "insert_mutant: bad parent position");
  const std::size_t c = counts_.size();
  std::vector<long long> nd((c + 1) * (c + 1));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) nd[i * (c + 1) + j] = dist_[i * c + j];
  for (std::size_t i = 0; i < c; ++i) {
    const long long d = dist_[i * c + parent_pos] + 1;
    nd[i * (c + 1) + c] = d;
    nd[c * (c + 1) + i] = d;
  }
  nd[c * (c + 1) + c] = 0;
  dist_ = std::move(nd);
  counts_.push_back(1);
  traits_.push_back(trait);
  ids_.push_back(next_id_++);
  return c;
}

std::size_t FinitePhylogeny::merge_or_insert(const std::vector<long long>& unit_row, Trait trait, long long count) {
  const std::size_t c = counts_.size();
  require(unit_row.size() == c, ErrorCode::precondition_violated, "merge_or_insert: row length mismatch");
  require(count >= 1, ErrorCode::precondition_violated, "merge_or_insert: count must be positive");
  for (std::size_t i = 0; i < c; ++i) {
    if (unit_row[i] == 0) {
      require(traits_[i] == trait, ErrorCode::precondition_violated,
              "merge_or_insert: distance-zero insert with a different trait");
      counts_[i] += count;
      return i;
    }
  }
  std::vector<long long> nd((c + 1) * (c + 1));
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) nd[i * (c + 1) + j] = dist_[i * c + j];
  for (std::size_t i = 0; i < c; ++i) {
    nd[i * (c + 1) + c] = unit_row[i];
    nd[c * (c + 1) + i] = unit_row[i];
  }
  nd[c * (c + 1) + c] = 0;
  dist_ = std::move(nd);
  counts_.push_back(count);
  traits_.push_back(trait);
  ids_.push_back(next_id_++);
  return c;
}

void FinitePhylogeny::validate(const TraitSpace* space) const {
  const std::size_t c = clan_count();
  require(counts_.size() == c && traits_.size() == c && ids_.size() == c && dist_.size() == c * c,
          ErrorCode::precondition_violated, "phylogeny: inconsistent array sizes");
  for (std::size_t i = 0; i < c; ++i) {
    require(counts_[i] >= 1, ErrorCode::precondition_violated, "phylogeny: clan with non-positive count");
    if (space != nullptr) traits_[i].check_in(*space);
    require(unit_dist(i, i) == 0, ErrorCode::precondition_violated, "phylogeny: nonzero diagonal");
    for (std::size_t j = i + 1; j < c; ++j) {
      require(unit_dist(i, j) == unit_dist(j, i), ErrorCode::precondition_violated, "phylogeny: asymmetric distances");
      require(unit_dist(i, j) >= 1, ErrorCode::precondition_violated,
              "phylogeny: distinct clans at distance zero");
    }
  }
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t k = 0; k < c; ++k)
        require(unit_dist(i, j) <= unit_dist(i, k) + unit_dist(k, j), ErrorCode::precondition_violated,
                "phylogeny: triangle inequality violated");
}

nlohmann::json FinitePhylogeny::to_json() const {
  nlohmann::json j;
  j["ell"] = ell_;
  j["zeta"] = zeta_;
  j["clans"] = ids_;
  j["counts"] = counts_;
  auto traits = nlohmann::json::array();
  for (const auto& t : traits_) traits.push_back(trait_to_json(t));
  j["traits"] = std::move(traits);
  const std::size_t c = clan_count();
  auto dist = nlohmann::json::array();
  for (std::size_t i = 0; i < c; ++i) {
    auto row = nlohmann::json::array();
    for (std::size_t j2 = 0; j2 < c; ++j2) row.push_back(unit_dist(i, j2));
    dist.push_back(std::move(row));
  }
  j["dist"] = std::move(dist);
  return j;
}

FinitePhylogeny FinitePhylogeny::from_json(const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    require(key == "ell" || key == "zeta" || key == "clans" || key == "counts" || key == "traits" || key == "dist",
            ErrorCode::config_error, "phylogeny: unknown key \"" + key + "\"");
  }
  FinitePhylogeny chi{j.at("ell").get<double>(), j.at("zeta").get<double>()};
  chi.counts_ = j.at("counts").get<std::vector<long long>>();
  for (const auto& t : j.at("traits")) chi.traits_.push_back(trait_from_json(t));
  const std::size_t c = chi.counts_.size();
  if (j.contains("clans")) {
    chi.ids_ = j.at("clans").get<std::vector<ClanId>>();
  } else {
    chi.ids_.resize(c);
    std::iota(chi.ids_.begin(), chi.ids_.end(), 0u);
  }
  for (ClanId id : chi.ids_) chi.next_id_ = std::max(chi.next_id_, id + 1);
  chi.dist_.assign(c * c, 0);
  const auto& dist = j.at("dist");
  require(dist.size() == c, ErrorCode::config_error, "phylogeny: dist row count mismatch");
  for (std::size_t i = 0; i < c; ++i) {
    require(dist[i].size() == c, ErrorCode::config_error, "phylogeny: dist column count mismatch");
    for (std::size_t j2 = 0; j2 < c; ++j2) chi.dist_[i * c + j2] = dist[i][j2].get<long long>();
  }
  chi.validate();
  return chi;
}

SampledMatrix sample_distance_matrix(const FinitePhylogeny& chi, std::size_t n, RandomStream& rng) {
  const auto w = chi.sampling_weights();
  std::vector<std::size_t> pick(n);
  for (std::size_t i = 0; i < n; ++i) pick[i] = rng.pick_weighted(w, 1.0);

  SampledMatrix out;
  out.n = n;
  out.dist.assign(n * n, 0.0);
  out.traits.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.traits.push_back(chi.trait(pick[i]));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out.dist[i * n + j] = chi.phys_dist(pick[i], pick[j]);
  return out;
}

std::string phylip_square(const SampledMatrix& m) {
  std::string out = std::to_string(m.n) + "\n";
  char buf[32];
  for (std::size_t i = 0; i < m.n; ++i) {
    std::string name = "S" + std::to_string(i + 1);
    name.resize(10, ' ');
    out += name;
    for (std::size_t j = 0; j < m.n; ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", m(i, j));
      if (j > 0) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

namespace {

// Exact minimum set cover by branch and bound over clan bitmasks.
struct CoverSearch {
  const std::vector<std::uint32_t>& balls;
  std::uint32_t universe;
  int best;

  void run(std::uint32_t covered, int used) {
    if (used >= best) return;
    if (covered == universe) {
      best = used;
      return;
    }
    // cheapest lower bound: remaining elements / largest ball
    int max_ball = 0;
    for (auto b : balls) max_ball = std::max(max_ball, std::popcount(b & ~covered));
    const int uncovered = std::popcount(universe & ~covered);
    if (used + (uncovered + max_ball - 1) / max_ball >= best) return;

    // branch on the uncovered element with the fewest candidate balls
    int pick = -1, pick_options = std::numeric_limits<int>::max();
    for (int e = 0; e < 32; ++e) {
      if (!((universe >> e) & 1u) || ((covered >> e) & 1u)) continue;
      int options = 0;
      for (auto b : balls)
        if ((b >> e) & 1u) ++options;
      if (options < pick_options) {
        pick_options = options;
        pick = e;
      }
    }
    for (std::size_t x = 0; x < balls.size(); ++x) {
      if ((balls[x] >> pick) & 1u) run(covered | balls[x], used + 1);
    }
  }
};

std::vector<std::uint32_t> eps_balls(const FinitePhylogeny& chi, double eps) {
  const std::size_t c = chi.clan_count();
  std::vector<std::uint32_t> balls(c, 0);
  for (std::size_t x = 0; x < c; ++x)
    for (std::size_t y = 0; y < c; ++y)
      if (chi.phys_dist(x, y) <= eps) balls[x] |= (1u << y);
  return balls;
}

}  // namespace

CoveringResult covering_number(const FinitePhylogeny& chi, double eps) {
  require(eps >= 0.0, ErrorCode::precondition_violated, "covering_number: negative radius");
  const std::size_t c = chi.clan_count();
  if (c == 0) return {0, true};

  if (c <= 20) {
    const auto balls = eps_balls(chi, eps);
    CoverSearch search{balls, (c == 32 ? ~0u : ((1u << c) - 1u)), static_cast<int>(c)};
    search.run(0u, 0);
    return {search.best, true};
  }

  // greedy fallback, within a factor 1 + ln(c) of optimal
  std::vector<char> covered(c, 0);
  std::size_t remaining = c;
  int used = 0;
  while (remaining > 0) {
    std::size_t best_x = 0, best_gain = 0;
    for (std::size_t x = 0; x < c; ++x) {
      std::size_t gain = 0;
      for (std::size_t y = 0; y < c; ++y)
        if (!covered[y] && chi.phys_dist(x, y) <= eps) ++gain;
      if (gain > best_gain) {
        best_gain = gain;
        best_x = x;
      }
    }
    for (std::size_t y = 0; y < c; ++y)
      if (!covered[y] && chi.phys_dist(best_x, y) <= eps) {
        covered[y] = 1;
        --remaining;
      }
    ++used;
  }
  return {used, false};
}

bool TraitWindow::contains(const Trait& t) const {
  if (t.is_real()) return t.value() >= lo && t.value() <= hi;
  const int i = t.index();
  return i >= 0 && i < static_cast<int>(allowed.size()) && allowed[i];
}

CompactnessReport compactness_report(const FinitePhylogeny& chi, const TraitWindow& window, double eps) {
  CompactnessReport r;
  if (chi.empty()) return r;
  r.mass = chi.total_mass();
  for (std::size_t x = 0; x < chi.clan_count(); ++x)
    if (!window.contains(chi.trait(x))) r.mass_outside_window += chi.zeta() * static_cast<double>(chi.count(x));
  r.diameter = chi.diameter();
  r.covering = covering_number(chi, eps);
  return r;
}

bool isometric_equivalent(const FinitePhylogeny& a, const FinitePhylogeny& b) {
  if (a.clan_count() != b.clan_count()) return false;
  if (a.ell() != b.ell() || a.zeta() != b.zeta()) return false;
  const std::size_t c = a.clan_count();
  require(c <= 8, ErrorCode::precondition_violated, "isometric_equivalent: permutation search limited to 8 clans");
  std::vector<std::size_t> perm(c);
  std::iota(perm.begin(), perm.end(), 0u);
  do {
    bool ok = true;
    for (std::size_t i = 0; ok && i < c; ++i)
      ok = a.count(i) == b.count(perm[i]) && a.trait(i) == b.trait(perm[i]);
    for (std::size_t i = 0; ok && i < c; ++i)
      for (std::size_t j = 0; ok && j < c; ++j) ok = a.unit_dist(i, j) == b.unit_dist(perm[i], perm[j]);
    if (ok) return true;
  } while (std::next_permutation(perm.begin(), perm.end()));
  return false;
}

}  // namespace phylosim
