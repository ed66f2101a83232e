#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phylosim/phylogeny.hpp"
#include "phylosim/polynomials.hpp"
#include "phylosim/rate_model.hpp"

namespace phylosim {

// Mass-weighted state averages over ordered clan pairs (partner first, then
// the affected particle, matching the competition kernel's argument order).
double hat_beta(const FinitePhylogeny& chi, const RateModel& model);
double hat_gamma(const FinitePhylogeny& chi, const RateModel& model, const GammaFn& gamma);

struct StateAverages {
  double beta_hat = 0.0;
  double gamma_birth_hat = 0.0;
  double gamma_death_hat = 0.0;
  double net_growth() const { return gamma_birth_hat - gamma_death_hat; }
};
StateAverages state_averages(const FinitePhylogeny& chi, const RateModel& model);

// Limit generator split into its operative parts; total() is their sum.
// Conventions: slot indices are 0-based; the pair-average reweighing part
// consumes the shifted-index form of h, realised by letting a fresh sample
// play the reweighed slot while an independent partner is averaged over.
struct OmegaParts {
  double competition = 0.0;    // net-growth drift of the total mass
  double fluctuation = 0.0;    // branching diffusion term
  double mass_flow = 0.0;      // covariance of mass moves with sampled branching rates
  double trait_mutation = 0.0; // per-slot limit mutation operator
  double growth = 0.0;         // outward drift of sampled pair distances
  double gamma_reweigh = 0.0;  // competition reweighing of each sample slot
  double beta_reweigh = 0.0;   // branching-rate reweighing of each sample slot
  double resample = 0.0;       // slot replacement driven by branching

  double total() const {
    return competition + fluctuation + mass_flow + trait_mutation + growth + gamma_reweigh + beta_reweigh +
           resample;
  }
  nlohmann::json to_json() const;
};

// Zero on the empty state.  Requires a smooth mass factor and, when p > 0,
// a mutation family with a limit operator (gaussian_step or rare_jump).
OmegaParts omega_limit(const FinitePhylogeny& chi, const TestFunction& F, const RateModel& model);

enum class DiscreteEngine {
  auto_select,   // fused for degree <= 2, materialized beyond
  fused,         // closed-form neighbour updates of the tuple sums
  materialized,  // builds each neighbour state and evaluates F on it
};

struct DiscreteOmegaOptions {
  DiscreteEngine engine = DiscreteEngine::auto_select;
  int gh_order = 32;                     // nodes for gaussian mutation integrals
  bool estimate_quadrature_error = false;  // re-run at half order and report the gap
};

struct DiscreteOmega {
  double value = 0.0;
  double death_part = 0.0;
  double birth_part = 0.0;
  double quadrature_error = 0.0;
  bool fused = false;
};

// Generator of the scale-N particle system at a state with ell = zeta = 1/N;
// exact clan sums, no sampling.  Zero on the empty state.
DiscreteOmega omega_discrete(const FinitePhylogeny& chi, const TestFunction& F, const RateModel& model, int N,
                             const DiscreteOmegaOptions& options = {});

// Clan layout with scale-free masses and physical distances; embedding at
// scale N keeps physical geometry fixed while counts and unit distances are
// rounded to the 1/N grid.  Fractions and distances on the 1/8 grid embed
// exactly for every N divisible by 8.
struct ClanGeometry {
  std::string name;
  std::vector<double> mass_fraction;
  std::vector<double> dist;        // row-major physical distances
  std::vector<double> real_trait;
  std::vector<int> finite_trait;

  std::size_t size() const { return mass_fraction.size(); }
};

FinitePhylogeny embed_at_scale(const ClanGeometry& geom, int N, const TraitSpace& space);
const std::vector<ClanGeometry>& standard_geometries();

struct GapEntry {
  std::string state;
  std::string function;
  int N = 0;
  double discrete = 0.0;
  double limit = 0.0;
  double gap = 0.0;
  double quadrature_error = 0.0;
  OmegaParts parts;
};

struct GapSlope {
  std::string state;
  std::string function;
  double slope = 0.0;
  double gap_first = 0.0;  // at the smallest N
  double gap_last = 0.0;   // at the largest N
};

struct GapReport {
  std::vector<GapEntry> entries;
  std::vector<GapSlope> slopes;
  double max_quadrature_error = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

GapReport convergence_gap(const RateModel& model, std::span<const ClanGeometry> geometries,
                          std::span<const TestFunction> functions, std::span<const int> scales);

// Least-squares slope of log(y) against log(x); pairs with y <= 0 are skipped.
double fit_loglog_slope(std::span<const double> x, std::span<const double> y);

}  // namespace phylosim
