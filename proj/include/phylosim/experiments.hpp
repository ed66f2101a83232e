#pragma once
// Batch experiments over replicate ensembles: moment-bound checks, martingale
// residuals, trajectory statistics, containment probes, coupled domination.
// Replicate k always draws from RandomStream(seed, k), so results do not
// depend on the worker count.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "phylosim/dynamics.hpp"
#include "phylosim/phylogeny.hpp"
#include "phylosim/polynomials.hpp"
#include "phylosim/random.hpp"
#include "phylosim/rate_model.hpp"

namespace phylosim {

// PHYLOSIM_THREADS when set, hardware concurrency otherwise, at least 1.
int worker_count();

// Runs job(k) for k in [0, reps) on worker_count() threads.  Results land in
// a vector indexed by replicate.
std::vector<std::vector<double>> run_replicates(
    std::size_t reps, const std::function<std::vector<double>(std::size_t)>& job);

struct Summary {
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
  std::size_t count = 0;
};
Summary summarize(const std::vector<double>& xs);
double quantile(std::vector<double> xs, double q);  // linear interpolation

// Random clan state built by repeated mutant insertion, so the distance
// matrix is tree-additive and valid by construction.
FinitePhylogeny random_state(const TraitSpace& space, int N, std::size_t clans,
                             long long extra_particles, RandomStream& rng);

// Certified product-form battery (degrees 0..3) shared by the convergence and
// residual checks; trait factors adapt to the trait space.
std::vector<TestFunction> standard_battery(const TraitSpace& space);

// ---------------------------------------------------------------------------
// Moment bounds

struct MomentCheck {
  int q = 1;
  double bound = 0.0;       // (1 + m0^q) * exp((2^q - 1)(2 beta_bar + gamma_b_bar) t)
  Summary end_moment;       // E[m_t^q]
  Summary sup_moment;       // E[sup_{s<=t} m_s^q], pathwise over events
  bool ok = false;          // end mean + 3.5 se <= bound
};

struct EscapeProbe {
  double m0 = 0.0;
  double probability = 0.0;  // P(sup_{s<=t} m_s >= delta)
};

struct MomentReport {
  std::vector<MomentCheck> checks;
  std::vector<EscapeProbe> escapes;
  double escape_delta = 0.0;
  bool all_ok = false;
  nlohmann::json to_json() const;
};

// Starts from a single clan of mass m0 (m0 * N particles).  Escape probes run
// only when escape_m0 is non-empty; they require gamma_death == 0.
MomentReport moment_bound_check(const RateModel& model, double m0, int N, double t,
                                const std::vector<int>& qs, std::size_t reps, std::uint64_t seed,
                                double escape_delta = 1.0, const std::vector<double>& escape_m0 = {});

// ---------------------------------------------------------------------------
// Martingale residuals (Dynkin check)

enum class ResidualMode { discrete, limit };

struct ResidualPoint {
  double time = 0.0;
  double residual = 0.0;  // mean of F(X_t) - F(X_0) - int_0^t (gen F)(X_s) ds
  double se = 0.0;
  double ratio = 0.0;     // |residual| / se, 0 when se == 0
};

struct ResidualSeries {
  std::string function;
  std::vector<ResidualPoint> points;
  double max_ratio = 0.0;
};

struct ResidualReport {
  ResidualMode mode = ResidualMode::discrete;
  std::size_t replicates = 0;
  std::vector<ResidualSeries> series;
  double max_ratio = 0.0;
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// The running integral sums (gen F)(state) * holding time along the exact
// piecewise-constant trajectory; grid times must be ascending and positive.
ResidualReport martingale_residual(const FinitePhylogeny& chi0, const RateModel& model,
                                   const std::vector<TestFunction>& fns, ResidualMode mode,
                                   const std::vector<double>& grid, std::size_t reps,
                                   std::uint64_t seed, const SimConfig& sim_config = {});

// ---------------------------------------------------------------------------
// Trajectory statistics and pattern labels

struct SeriesSpec {
  std::vector<double> grid;                          // observation times, ascending
  std::vector<double> eps_grid = {0.5, 0.25, 0.125}; // covering-number radii
  double strain_threshold = 0.05;                    // mass share that counts as a strain
  std::size_t pair_samples = 32;                     // genealogy pairs per observation
  std::size_t reps = 100;
  std::uint64_t seed = 1;
  SimConfig sim_config;
};

struct StatSeries {
  std::vector<std::string> names;          // statistic layout, shared by all rows
  std::vector<double> times;
  std::vector<std::vector<Summary>> rows;  // rows[time][stat]
  nlohmann::json to_json() const;
  std::string to_csv() const;              // long format: time,statistic,mean,se
};

struct PatternReport {
  StatSeries series;
  std::string label;           // "a".."d" or "extinct"
  double extinct_fraction = 0.0;
  double dominant_share = 0.0; // ensemble mean at the horizon
  double strain_count = 0.0;   // ensemble mean at the horizon
  nlohmann::json to_json() const;
};

StatSeries trajectory_statistics(const FinitePhylogeny& chi0, const RateModel& model,
                                 const SeriesSpec& spec);

// Label heuristics: extinction fraction > 1/2 -> "extinct"; dominant clan
// share > 0.8 -> "a"; mean strain count <= 10 -> "b"; still growing at the
// horizon (final > 1.5x midpoint) -> "d"; otherwise "c".
PatternReport phylo_patterns(const FinitePhylogeny& chi0, const RateModel& model,
                             const SeriesSpec& spec);

// ---------------------------------------------------------------------------
// Compact containment probe

struct ContainmentConstants {
  int k = 0;
  double eps = 0.0;       // 2^{-k}
  double mass_cap = 0.0;  // M_k: 95th percentile of sup_t m
  double trait_radius = 0.0;  // K_k: escape window radius
  double core_diameter = 0.0; // L_k: diameter of the (1-eps)-mass core
  double core_covering = 0.0; // N_k: eps-covering number of the core
  double containment_probability = 0.0;  // all four below their constants
  double target_probability = 0.0;       // 1 - eps0 * 2^{-k}
};

struct ContainmentReport {
  int N = 0;
  double eps0 = 0.1;
  std::vector<ContainmentConstants> constants;  // k = 0..k_max
  nlohmann::json to_json() const;
};

// Sup over the observation grid per replicate; constants are 95th-percentile
// fits.  The core drops whole clans (lightest diameter endpoint first) while
// the removed mass share stays below eps.
ContainmentReport compact_containment_probe(const FinitePhylogeny& chi0, const RateModel& model,
                                            int N, double T, const std::vector<double>& grid,
                                            int k_max, double eps0, std::size_t reps,
                                            std::uint64_t seed);

// ---------------------------------------------------------------------------
// Engine equivalence and coupled domination ensembles

struct EnsembleStats {
  std::vector<std::string> names;
  std::vector<Summary> stats;
  double extinct_fraction = 0.0;
  nlohmann::json to_json() const;
};

// Mass, clan count, diameter, covering count at eps, strain count at T.
EnsembleStats ensemble_at_horizon(const FinitePhylogeny& chi0, const RateModel& model, double T,
                                  Engine engine, double eps, double strain_threshold,
                                  std::size_t reps, std::uint64_t seed);

struct DominationEnsemble {
  std::size_t runs = 0;
  std::size_t subset_failures = 0;
  std::size_t precondition_failures = 0;
  std::vector<std::string> first_failure_messages;
  double mean_mass1 = 0.0;
  double mean_mass2 = 0.0;
  nlohmann::json to_json() const;
};

DominationEnsemble domination_ensemble(const FinitePhylogeny& chi0, const RateModel& model1,
                                       const RateModel& model2, double T, std::size_t reps,
                                       std::uint64_t seed);

}  // namespace phylosim
