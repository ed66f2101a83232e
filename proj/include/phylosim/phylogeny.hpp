#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "phylosim/random.hpp"
#include "phylosim/trait.hpp"

namespace phylosim {

using ClanId = std::uint32_t;

// Population state with clones collapsed: one clan per occupied point of the
// genetic metric space.  Distances are kept as exact integer substitution
// counts in units of ell; physical distance = ell * units.  Each clan carries
// a positive particle count; a particle contributes mass zeta, so
// total_mass = zeta * sum(counts).
//
// Metric invariants (checked by validate()): dist symmetric with zero
// diagonal, off-diagonal entries >= 1 (distinct clans may never sit at
// distance zero -- they would be one clan), and the triangle inequality.
class FinitePhylogeny {
 public:
  FinitePhylogeny(double ell, double zeta);
  static FinitePhylogeny single_clan(double ell, double zeta, long long count, Trait trait);

  double ell() const { return ell_; }
  double zeta() const { return zeta_; }
  std::size_t clan_count() const { return counts_.size(); }
  bool empty() const { return counts_.empty(); }

  long long count(std::size_t pos) const { return counts_[pos]; }
  const Trait& trait(std::size_t pos) const { return traits_[pos]; }
  long long unit_dist(std::size_t i, std::size_t j) const { return dist_[i * counts_.size() + j]; }
  double phys_dist(std::size_t i, std::size_t j) const { return ell_ * static_cast<double>(unit_dist(i, j)); }

  ClanId clan_id(std::size_t pos) const { return ids_[pos]; }
  std::optional<std::size_t> find_clan(ClanId id) const;

  long long particle_count() const;
  double total_mass() const { return zeta_ * static_cast<double>(particle_count()); }
  double diameter() const;

  // w_x = count_x * zeta / total_mass; fails with zero_mass on the empty state
  std::vector<double> sampling_weights() const;

  void add_particle(std::size_t pos) { counts_[pos] += 1; }
  // Decrements a clan; clans never sit at count zero, so the clan is pruned
  // when its last particle dies.  Returns true when pruned.
  bool remove_particle(std::size_t pos);
  // New clan one substitution away from the parent: row = parent row + 1.
  std::size_t insert_mutant(std::size_t parent_pos, Trait trait);
  // Distance-zero rows collapse onto the matching clan, anything else becomes
  // a new clan with the given unit-distance row.
  std::size_t merge_or_insert(const std::vector<long long>& unit_row, Trait trait, long long count = 1);

  void validate(const TraitSpace* space = nullptr) const;

  nlohmann::json to_json() const;
  static FinitePhylogeny from_json(const nlohmann::json& j);

 private:
  double ell_;
  double zeta_;
  std::vector<long long> counts_;
  std::vector<Trait> traits_;
  std::vector<long long> dist_;  // row-major, stride = clan_count
  std::vector<ClanId> ids_;
  ClanId next_id_ = 0;
};

// i.i.d. clan draws under the sampling measure; distances are physical.
struct SampledMatrix {
  std::size_t n = 0;
  std::vector<double> dist;  // row-major n x n
  std::vector<Trait> traits;

  double operator()(std::size_t i, std::size_t j) const { return dist[i * n + j]; }
};

SampledMatrix sample_distance_matrix(const FinitePhylogeny& chi, std::size_t n, RandomStream& rng);

// Square PHYLIP distance matrix, taxa S1..Sn, fixed six decimals.
std::string phylip_square(const SampledMatrix& m);

struct CoveringResult {
  int count = 0;
  bool exact = true;  // false once the greedy fallback (factor 1+ln C) kicks in
};

// Minimum number of closed eps-balls centred at clan points that cover all
// clans.  Exact branch-and-bound up to 20 clans, greedy beyond.
CoveringResult covering_number(const FinitePhylogeny& chi, double eps);

struct TraitWindow {
  double lo = 0.0, hi = 0.0;            // real traits
  std::vector<bool> allowed;            // finite traits, indexed by label
  bool contains(const Trait& t) const;
};

struct CompactnessReport {
  double mass = 0.0;
  double mass_outside_window = 0.0;
  double diameter = 0.0;
  CoveringResult covering;
};

CompactnessReport compactness_report(const FinitePhylogeny& chi, const TraitWindow& window, double eps);

// Exact equality up to clan relabelling; permutation search, intended for
// tests on states with at most 8 clans.
bool isometric_equivalent(const FinitePhylogeny& a, const FinitePhylogeny& b);

}  // namespace phylosim
