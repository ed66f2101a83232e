#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phylosim/random.hpp"
#include "phylosim/trait.hpp"

namespace phylosim {

// Branching rate beta(kappa).  Parametric on purpose: every family admits a
// decidable bound check, so model validation never has to trust a callback.
struct BetaFn {
  enum class Kind { constant, table };
  Kind kind = Kind::constant;
  double value = 1.0;
  std::vector<double> values;  // per finite label

  double operator()(const Trait& t) const {
    return kind == Kind::constant ? value : values.at(static_cast<std::size_t>(t.index()));
  }
};

// Competition kernel gamma(m, r, kappa1, kappa2), used for both the birth and
// the death side.  kappa1 is the sampled partner, kappa2 the affected particle.
//   zero            0
//   constant        c
//   table           c(kappa2)                       (finite traits)
//   exp_distance    c * exp(-r / rho)
//   linear_distance slope * r                       (diagnostic family)
//   logistic_death  d(kappa2) + m * u               (death side of the logistic model)
struct GammaFn {
  enum class Kind { zero, constant, table, exp_distance, linear_distance, logistic_death };
  Kind kind = Kind::zero;
  double value = 0.0;               // constant / exp_distance scale / linear slope
  double range = 1.0;               // exp_distance rho
  std::vector<double> values;       // table / logistic d-table
  double u = 0.0;                   // logistic crowding coefficient

  double operator()(double m, double r, const Trait& k1, const Trait& k2) const;
  bool is_zero() const { return kind == Kind::zero; }
  // true when the kernel ignores (m, r, kappa1); needed by the domination coupling
  bool depends_only_on_kappa2() const {
    return kind == Kind::zero || kind == Kind::constant || kind == Kind::table;
  }
};

// Per-birth trait move.  gaussian_step and rare_jump shrink with the scale
// parameter N handed to draw(); the fixed_* families ignore it.
struct MutationFamily {
  enum class Kind { gaussian_step, rare_jump, fixed_gaussian, fixed_matrix };
  Kind kind = Kind::gaussian_step;
  double sigma = 1.0;
  double theta = 1.0;
  std::vector<std::vector<double>> matrix;  // row-stochastic, zero diagonal

  bool rescaled() const { return kind == Kind::gaussian_step || kind == Kind::rare_jump; }
  // One draw from alpha_N(kappa, .)
  Trait draw(const Trait& kappa, int N, RandomStream& rng) const;
  // Probability alpha_N({kappa}) of staying put (the kernel atom)
  double stay_probability(int N) const;

  // Limit operator A applied to a one-coordinate function:
  // gaussian families: (sigma^2/2) f''(kappa)
  double gaussian_limit(double f_second) const;
  // jump families: theta * sum_j a(kappa,j) (f(j) - f(kappa))
  double jump_limit(std::span<const double> f_values, int kappa_index) const;
};

struct Bounds {
  double beta_bar = 1.0;
  double beta_lower = 1.0;
  double gamma_b_bar = 0.0;
  double gamma_d_bar = 0.0;
};

struct RateModel {
  TraitSpace traits;
  BetaFn beta;
  GammaFn gamma_birth;
  GammaFn gamma_death;
  double p = 0.0;
  MutationFamily mutation;
  Bounds bounds;

  // (1 v m) * gamma_d_bar, the admissible envelope for the death kernel
  double death_envelope(double m) const { return std::max(1.0, m) * bounds.gamma_d_bar; }
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> violations;  // each names the violated assumption

  std::string to_string() const;
};

// Checks the declared bounds on a deterministic probe grid of masses,
// distances and trait pairs, plus basic sanity of p and the mutation family.
ValidationReport validate(const RateModel& model);

// Draw from the mixed kernel p * alpha_N + (1-p) * delta_kappa.
Trait mixed_mutation_draw(const RateModel& model, const Trait& kappa, int N, RandomStream& rng);

nlohmann::json model_to_json(const RateModel& model);
RateModel model_from_json(const nlohmann::json& j);

// Built-in model presets: "neutral", "fleming_viot_like", "logistic", "cross_immunity".
RateModel preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace phylosim
