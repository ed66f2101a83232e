#include "phylosim/generators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "phylosim/errors.hpp"
#include "phylosim/quadrature.hpp"

namespace phylosim {

namespace {

const TraitFactor kUnitFactor = TraitFactor::one();

const TraitFactor& slot_factor(const TestFunction& F, std::size_t l) {
  return F.f.empty() ? kUnitFactor : F.f[l];
}

double pair_lambda(const TestFunction& F, std::size_t k) {
  return F.phi.lambdas.empty() ? 0.0 : F.phi.lambdas[k];
}

// Standard deviation of one mutant step at scale N.
double mutant_sd(const MutationFamily& fam, int N) {
  if (fam.kind == MutationFamily::Kind::gaussian_step) return fam.sigma / std::sqrt(static_cast<double>(N));
  return fam.sigma;  // fixed_gaussian ignores the scale
}

// Fraction of mutation-channel births that actually displace by ell, in the
// N -> infinity limit.  The rare_jump kernel keeps an atom of size 1 - theta/N
// at the current trait; those draws add mass to the parent clan, so the
// displacement rate dies out at speed 1/N and the limit growth term vanishes.
double displacement_limit(const MutationFamily& fam) {
  return fam.kind == MutationFamily::Kind::rare_jump ? 0.0 : 1.0;
}

}  // namespace

double hat_beta(const FinitePhylogeny& chi, const RateModel& model) {
  require(!chi.empty(), ErrorCode::zero_mass, "state average needs positive mass");
  const auto w = chi.sampling_weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * model.beta(chi.trait(i));
  return acc;
}

double hat_gamma(const FinitePhylogeny& chi, const RateModel& model, const GammaFn& gamma) {
  require(!chi.empty(), ErrorCode::zero_mass, "state average needs positive mass");
  (void)model;
  if (gamma.is_zero()) return 0.0;
  const auto w = chi.sampling_weights();
  const double m = chi.total_mass();
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j = 0; j < w.size(); ++j)
      acc += w[i] * w[j] * gamma(m, chi.phys_dist(i, j), chi.trait(i), chi.trait(j));
  return acc;
}

StateAverages state_averages(const FinitePhylogeny& chi, const RateModel& model) {
  StateAverages out;
  out.beta_hat = hat_beta(chi, model);
  out.gamma_birth_hat = hat_gamma(chi, model, model.gamma_birth);
  out.gamma_death_hat = hat_gamma(chi, model, model.gamma_death);
  return out;
}

nlohmann::json OmegaParts::to_json() const {
  return {{"competition", competition},
          {"fluctuation", fluctuation},
          {"mass_flow", mass_flow},
          {"trait_mutation", trait_mutation},
          {"growth", growth},
          {"gamma_reweigh", gamma_reweigh},
          {"beta_reweigh", beta_reweigh},
          {"resample", resample},
          {"total", total()}};
}

OmegaParts omega_limit(const FinitePhylogeny& chi, const TestFunction& F, const RateModel& model) {
  F.check_shape();
  F.check_traits(model.traits);
  require(F.g.kind == MassFactor::Kind::power_exp, ErrorCode::uncertified_function,
          "limit generator needs a three times differentiable mass factor");
  if (model.p > 0.0)
    require(model.mutation.rescaled(), ErrorCode::unsupported_function,
            "limit generator needs a rescaling mutation family when p > 0");

  OmegaParts parts;
  if (chi.empty()) return parts;

  const std::size_t n = F.degree;
  const std::size_t C = chi.clan_count();
  const double m = chi.total_mass();
  const auto w = chi.sampling_weights();
  const double g = F.g(m);
  const double g1 = F.g.d1(m);
  const double g2 = F.g.d2(m);

  std::vector<double> beta(C);
  for (std::size_t i = 0; i < C; ++i) beta[i] = model.beta(chi.trait(i));
  const StateAverages av = state_averages(chi, model);
  const double beta_hat = av.beta_hat;
  const double net_hat = av.net_growth();

  const bool has_competition = !model.gamma_birth.is_zero() || !model.gamma_death.is_zero();
  // net competition field seen by a particle at clan y, partner averaged out
  std::vector<double> net_field(C, 0.0);
  if (has_competition) {
    for (std::size_t y = 0; y < C; ++y) {
      double acc = 0.0;
      for (std::size_t x = 0; x < C; ++x) {
        const double r = chi.phys_dist(x, y);
        acc += w[x] * (model.gamma_birth(m, r, chi.trait(x), chi.trait(y)) -
                       model.gamma_death(m, r, chi.trait(x), chi.trait(y)));
      }
      net_field[y] = acc;
    }
  }

  // limit mutation operator applied to each slot factor, tabulated per clan
  const bool has_mutation = model.p > 0.0 && n > 0;
  std::vector<double> mut(has_mutation ? n * C : 0, 0.0);
  if (has_mutation) {
    for (std::size_t l = 0; l < n; ++l) {
      const TraitFactor& f = slot_factor(F, l);
      if (model.mutation.kind == MutationFamily::Kind::gaussian_step) {
        for (std::size_t i = 0; i < C; ++i) mut[l * C + i] = model.mutation.gaussian_limit(f.d2(chi.trait(i)));
      } else {
        std::vector<double> table(model.traits.size);
        for (std::size_t lab = 0; lab < table.size(); ++lab)
          table[lab] = f(Trait::finite(static_cast<int>(lab)));
        for (std::size_t i = 0; i < C; ++i)
          mut[l * C + i] = model.mutation.jump_limit(table, chi.trait(i).index());
      }
    }
  }

  // tuple accumulators
  double P = 0.0;                      // E[phi f]
  double sum_beta_h = 0.0;             // sum over slots of E[beta_l phi f]
  double sum_field_h = 0.0;            // sum over slots of E[net_field(slot l) phi f]
  double mutation_acc = 0.0;           // E[sum_l beta_l (A f_l) prod_{i != l} f_i phi]
  double growth_acc = 0.0;             // E[sum_{l1<l2} (beta_l1 + beta_l2)(-lambda_pair) phi f]
  double replace_acc = 0.0;            // E[sum_{l1 != l2} beta_l1 ((phi f) o theta_{l1,l2} - phi f)]

  if (n == 0) {
    P = 1.0;
  } else {
    std::vector<double> fval(n * C);
    for (std::size_t l = 0; l < n; ++l) {
      const TraitFactor& f = slot_factor(F, l);
      for (std::size_t i = 0; i < C; ++i) fval[l * C + i] = f(chi.trait(i));
    }
    const bool has_phi = !F.phi.lambdas.empty();

    // phi and trait product of a full tuple assignment
    const auto tuple_h = [&](const std::vector<std::size_t>& q) {
      double prod = 1.0;
      for (std::size_t l = 0; l < n; ++l) prod *= fval[l * C + q[l]];
      if (has_phi) {
        double s = 0.0;
        for (std::size_t l1 = 0; l1 + 1 < n; ++l1)
          for (std::size_t l2 = l1 + 1; l2 < n; ++l2)
            s += pair_lambda(F, pair_index(l1, l2, n)) * chi.phys_dist(q[l1], q[l2]);
        prod *= std::exp(-s);
      }
      return prod;
    };

    std::vector<std::size_t> pick(n, 0);
    std::vector<std::size_t> scratch(n);
    std::vector<double> prefix(n + 1), suffix(n + 1);
    for (;;) {
      double W = 1.0;
      for (std::size_t l = 0; l < n; ++l) W *= w[pick[l]];

      prefix[0] = 1.0;
      for (std::size_t l = 0; l < n; ++l) prefix[l + 1] = prefix[l] * fval[l * C + pick[l]];
      suffix[n] = 1.0;
      for (std::size_t l = n; l-- > 0;) suffix[l] = suffix[l + 1] * fval[l * C + pick[l]];
      const double fprod = prefix[n];

      double phi = 1.0;
      if (has_phi) {
        double s = 0.0;
        for (std::size_t l1 = 0; l1 + 1 < n; ++l1)
          for (std::size_t l2 = l1 + 1; l2 < n; ++l2)
            s += pair_lambda(F, pair_index(l1, l2, n)) * chi.phys_dist(pick[l1], pick[l2]);
        phi = std::exp(-s);
      }
      const double h = phi * fprod;
      const double Wh = W * h;

      P += Wh;
      for (std::size_t l = 0; l < n; ++l) {
        sum_beta_h += Wh * beta[pick[l]];
        if (has_competition) sum_field_h += Wh * net_field[pick[l]];
      }
      if (has_mutation) {
        double acc = 0.0;
        for (std::size_t l = 0; l < n; ++l)
          acc += beta[pick[l]] * mut[l * C + pick[l]] * prefix[l] * suffix[l + 1];
        mutation_acc += W * phi * acc;
      }
      if (has_phi && n >= 2) {
        double acc = 0.0;
        for (std::size_t l1 = 0; l1 + 1 < n; ++l1)
          for (std::size_t l2 = l1 + 1; l2 < n; ++l2)
            acc -= (beta[pick[l1]] + beta[pick[l2]]) * pair_lambda(F, pair_index(l1, l2, n));
        growth_acc += Wh * acc;
      }
      if (n >= 2) {
        for (std::size_t l1 = 0; l1 < n; ++l1)
          for (std::size_t l2 = 0; l2 < n; ++l2) {
            if (l1 == l2) continue;
            scratch = pick;
            scratch[l2] = pick[l1];
            replace_acc += W * beta[pick[l1]] * (tuple_h(scratch) - h);
          }
      }

      // odometer over clan assignments
      std::size_t l = 0;
      while (l < n && ++pick[l] == C) pick[l++] = 0;
      if (l == n) break;
    }
  }

  const double nd = static_cast<double>(n);
  parts.competition = net_hat * m * g1 * P;
  parts.fluctuation = beta_hat * m * g2 * P;
  parts.mass_flow = 2.0 * g1 * (sum_beta_h - nd * beta_hat * P);
  parts.trait_mutation = model.p * g * mutation_acc;
  parts.growth = model.p * displacement_limit(model.mutation) * g * growth_acc;
  parts.gamma_reweigh = g * (sum_field_h - nd * net_hat * P);
  parts.beta_reweigh = (g / m) * (nd * beta_hat * P - sum_beta_h);
  parts.resample = (g / m) * (replace_acc + nd * (nd * beta_hat * P - sum_beta_h));
  return parts;
}

namespace {

// Per-clan pieces shared by both discrete engines.
struct DiscreteSetup {
  double m = 0.0;
  double zeta = 0.0;
  std::vector<double> w;
  std::vector<double> beta;
  std::vector<double> death_field;  // partner-averaged competition kill rate
  std::vector<double> birth_field;  // partner-averaged enhancement rate
};

DiscreteSetup discrete_setup(const FinitePhylogeny& chi, const RateModel& model) {
  DiscreteSetup s;
  s.m = chi.total_mass();
  s.zeta = chi.zeta();
  s.w = chi.sampling_weights();
  const std::size_t C = chi.clan_count();
  s.beta.resize(C);
  s.death_field.assign(C, 0.0);
  s.birth_field.assign(C, 0.0);
  for (std::size_t i = 0; i < C; ++i) s.beta[i] = model.beta(chi.trait(i));
  for (std::size_t x2 = 0; x2 < C; ++x2) {
    double d = 0.0, b = 0.0;
    for (std::size_t x1 = 0; x1 < C; ++x1) {
      const double r = chi.phys_dist(x1, x2);
      if (!model.gamma_death.is_zero())
        d += s.w[x1] * model.gamma_death(s.m, r, chi.trait(x1), chi.trait(x2));
      if (!model.gamma_birth.is_zero())
        b += s.w[x1] * model.gamma_birth(s.m, r, chi.trait(x1), chi.trait(x2));
    }
    s.death_field[x2] = d;
    s.birth_field[x2] = b;
  }
  return s;
}

// Mutation-channel targets with their probabilities inside alpha_hat_N.
// clone_prob absorbs the (1-p) branch and any atom the family keeps at kappa.
struct BirthMix {
  double clone_prob = 1.0;
  double mutant_prob = 0.0;  // spread over targets below
};

BirthMix birth_mix(const RateModel& model, int N) {
  BirthMix mix;
  const double stay = model.mutation.stay_probability(N);
  mix.mutant_prob = model.p * (1.0 - stay);
  mix.clone_prob = 1.0 - mix.mutant_prob;
  return mix;
}

// Closed-form tuple-sum engine for degree <= 2.  Tracks the sampled product
// sum S and updates it for one-particle neighbours without re-enumerating:
// with alpha = m/m' and c = zeta/m', a count move at clan x sends
//   n=2:  S' = a^2 S +- a c (f1_x A_x + B_x f2_x) + c^2 f1_x f2_x,
// where A_x, B_x are the phi-weighted row and column sums at x; a mutant
// re-uses them scaled by exp(-lambda ell) since its row is the parent's + ell.
class FusedEngine {
 public:
  FusedEngine(const FinitePhylogeny& chi, const TestFunction& F, const DiscreteSetup& s)
      : chi_(chi), F_(F), s_(s), n_(F.degree), C_(chi.clan_count()) {
    require(n_ <= 2, ErrorCode::precondition_violated, "fused engine handles degree <= 2");
    lambda_ = n_ == 2 ? pair_lambda(F, 0) : 0.0;
    step_ = std::exp(-lambda_ * chi.ell());
    if (n_ >= 1) {
      f1_.resize(C_);
      for (std::size_t i = 0; i < C_; ++i) f1_[i] = slot_factor(F, 0)(chi.trait(i));
    }
    if (n_ == 2) {
      f2_.resize(C_);
      for (std::size_t i = 0; i < C_; ++i) f2_[i] = slot_factor(F, 1)(chi.trait(i));
      A_.assign(C_, 0.0);
      B_.assign(C_, 0.0);
      S_ = 0.0;
      for (std::size_t x = 0; x < C_; ++x) {
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < C_; ++j) {
          const double phi = std::exp(-lambda_ * chi.phys_dist(x, j));
          a += s.w[j] * phi * f2_[j];
          b += s.w[j] * phi * f1_[j];
        }
        A_[x] = a;
        B_[x] = b;
        S_ += s.w[x] * f1_[x] * a;
      }
    } else if (n_ == 1) {
      S_ = 0.0;
      for (std::size_t i = 0; i < C_; ++i) S_ += s.w[i] * f1_[i];
    } else {
      S_ = 1.0;
    }
    value_ = F.g(s.m) * S_;
  }

  double current() const { return value_; }

  // F(chi - zeta delta_x) - F(chi)
  double death_delta(std::size_t x, const TraitSpace& space) const {
    if (chi_.particle_count() == 1) return F_.empty_state_value(space) - value_;
    return shifted_delta(x, s_.m - s_.zeta, /*sign=*/-1.0, f1_value(x), f2_value(x), 1.0);
  }

  // F(chi + zeta delta_parent) - F(chi)
  double clone_delta(std::size_t x) const {
    return shifted_delta(x, s_.m + s_.zeta, /*sign=*/+1.0, f1_value(x), f2_value(x), 1.0);
  }

  // F(mutant of x with trait t) - F(chi); the new clan sits ell beyond x
  double mutant_delta(std::size_t x, double f1_t, double f2_t) const {
    return shifted_delta(x, s_.m + s_.zeta, /*sign=*/+1.0, f1_t, f2_t, step_);
  }

 private:
  double f1_value(std::size_t x) const { return n_ >= 1 ? f1_[x] : 1.0; }
  double f2_value(std::size_t x) const { return n_ == 2 ? f2_[x] : 1.0; }

  double shifted_delta(std::size_t x, double m2, double sign, double f1x, double f2x, double shift) const {
    const double m = s_.m;
    const double zeta = s_.zeta;
    const double alpha = m / m2;
    const double c = zeta / m2;
    // alpha^k - 1 written without cancellation: (m^k - m2^k)/m2^k
    const double a1m1 = -sign * zeta / m2;                          // alpha - 1
    const double a2m1 = -sign * zeta * (m + m2) / (m2 * m2);        // alpha^2 - 1
    double dS = 0.0;
    if (n_ == 1) {
      dS = a1m1 * S_ + sign * c * shift * f1x;
    } else if (n_ == 2) {
      dS = a2m1 * S_ + sign * alpha * c * shift * (f1x * A_[x] + B_[x] * f2x) + c * c * f1x * f2x;
    }
    const double g2v = F_.g(m2);
    return g2v * dS + (g2v - F_.g(m)) * S_;
  }

  const FinitePhylogeny& chi_;
  const TestFunction& F_;
  const DiscreteSetup& s_;
  std::size_t n_;
  std::size_t C_;
  double lambda_ = 0.0;
  double step_ = 1.0;
  double S_ = 1.0;
  double value_ = 0.0;
  std::vector<double> f1_, f2_, A_, B_;
};

double omega_discrete_fused(const FinitePhylogeny& chi, const TestFunction& F, const RateModel& model, int N,
                            int gh_order, double* death_out, double* birth_out) {
  const DiscreteSetup s = discrete_setup(chi, model);
  const FusedEngine eng(chi, F, s);
  const std::size_t C = chi.clan_count();
  const BirthMix mix = birth_mix(model, N);
  const bool gaussian = model.p > 0.0 && (model.mutation.kind == MutationFamily::Kind::gaussian_step ||
                                          model.mutation.kind == MutationFamily::Kind::fixed_gaussian);
  const GaussHermiteRule* rule = gaussian ? &GaussHermiteRule::of_order(gh_order) : nullptr;
  const double sd = gaussian ? mutant_sd(model.mutation, N) : 0.0;

  double death = 0.0;
  double birth = 0.0;
  for (std::size_t x = 0; x < C; ++x) {
    const double count = static_cast<double>(chi.count(x));
    const double natural = s.beta[x] / s.zeta;
    death += count * (natural + s.death_field[x]) * eng.death_delta(x, model.traits);

    double expected_birth = mix.clone_prob * eng.clone_delta(x);
    if (mix.mutant_prob > 0.0) {
      double mut = 0.0;
      if (gaussian) {
        const double mean = chi.trait(x).value();
        const TraitFactor& h1 = slot_factor(F, 0);
        const TraitFactor& h2 = slot_factor(F, 1);
        mut = rule->integrate_normal(mean, sd, [&](double k) {
          const Trait t = Trait::real(k);
          const double v1 = F.degree >= 1 ? h1(t) : 1.0;
          const double v2 = F.degree == 2 ? h2(t) : 1.0;
          return eng.mutant_delta(x, v1, v2);
        });
      } else {
        // jump kernels: exact expectation over the off-diagonal row
        const auto& row = model.mutation.matrix.at(static_cast<std::size_t>(chi.trait(x).index()));
        for (std::size_t lab = 0; lab < row.size(); ++lab) {
          if (row[lab] == 0.0) continue;
          const Trait t = Trait::finite(static_cast<int>(lab));
          const double v1 = F.degree >= 1 ? slot_factor(F, 0)(t) : 1.0;
          const double v2 = F.degree == 2 ? slot_factor(F, 1)(t) : 1.0;
          mut += row[lab] * eng.mutant_delta(x, v1, v2);
        }
      }
      expected_birth += mix.mutant_prob * mut;
    }
    birth += count * (natural + s.birth_field[x]) * expected_birth;
  }
  if (death_out) *death_out = death;
  if (birth_out) *birth_out = birth;
  return death + birth;
}

double omega_discrete_materialized(const FinitePhylogeny& chi, const TestFunction& F, const RateModel& model,
                                   int N, int gh_order, double* death_out, double* birth_out) {
  const DiscreteSetup s = discrete_setup(chi, model);
  const std::size_t C = chi.clan_count();
  const BirthMix mix = birth_mix(model, N);
  const bool gaussian = model.p > 0.0 && (model.mutation.kind == MutationFamily::Kind::gaussian_step ||
                                          model.mutation.kind == MutationFamily::Kind::fixed_gaussian);
  const GaussHermiteRule* rule = gaussian ? &GaussHermiteRule::of_order(gh_order) : nullptr;
  const double sd = gaussian ? mutant_sd(model.mutation, N) : 0.0;

  const double base = evaluate(F, chi).value;
  double death = 0.0;
  double birth = 0.0;
  for (std::size_t x = 0; x < C; ++x) {
    const double count = static_cast<double>(chi.count(x));
    const double natural = s.beta[x] / s.zeta;

    FinitePhylogeny after_death = chi;
    after_death.remove_particle(x);
    death += count * (natural + s.death_field[x]) * (evaluate(F, after_death).value - base);

    FinitePhylogeny after_clone = chi;
    after_clone.add_particle(x);
    double expected_birth = mix.clone_prob * (evaluate(F, after_clone).value - base);
    if (mix.mutant_prob > 0.0) {
      double mut = 0.0;
      if (gaussian) {
        const double mean = chi.trait(x).value();
        mut = rule->integrate_normal(mean, sd, [&](double k) {
          FinitePhylogeny after = chi;
          after.insert_mutant(x, Trait::real(k));
          return evaluate(F, after).value - base;
        });
      } else {
        const auto& row = model.mutation.matrix.at(static_cast<std::size_t>(chi.trait(x).index()));
        for (std::size_t lab = 0; lab < row.size(); ++lab) {
          if (row[lab] == 0.0) continue;
          FinitePhylogeny after = chi;
          after.insert_mutant(x, Trait::finite(static_cast<int>(lab)));
          mut += row[lab] * (evaluate(F, after).value - base);
        }
      }
      expected_birth += mix.mutant_prob * mut;
    }
    birth += count * (natural + s.birth_field[x]) * expected_birth;
  }
  if (death_out) *death_out = death;
  if (birth_out) *birth_out = birth;
  return death + birth;
}

double omega_discrete_at_order(const FinitePhylogeny& chi, const TestFunction& F, const RateModel& model,
                               int N, const DiscreteOmegaOptions& options, int gh_order, DiscreteOmega& out) {
  const bool fused = options.engine == DiscreteEngine::fused ||
                     (options.engine == DiscreteEngine::auto_select && F.degree <= 2);
  out.fused = fused;
  if (fused)
    return omega_discrete_fused(chi, F, model, N, gh_order, &out.death_part, &out.birth_part);
  return omega_discrete_materialized(chi, F, model, N, gh_order, &out.death_part, &out.birth_part);
}

}  // namespace

DiscreteOmega omega_discrete(const FinitePhylogeny& chi, const TestFunction& F, const RateModel& model, int N,
                             const DiscreteOmegaOptions& options) {
  F.check_shape();
  F.check_traits(model.traits);
  require(N >= 1, ErrorCode::precondition_violated, "scale index must be positive");
  if (model.mutation.kind == MutationFamily::Kind::rare_jump)
    require(static_cast<double>(N) > model.mutation.theta, ErrorCode::precondition_violated,
            "rare_jump kernel needs N > theta");

  DiscreteOmega result;
  if (chi.empty()) return result;

  const double unit = 1.0 / static_cast<double>(N);
  require(std::abs(chi.ell() - unit) <= 1e-12 && std::abs(chi.zeta() - unit) <= 1e-12,
          ErrorCode::scale_mismatch, "state is not on the 1/N grid of the requested scale");

  result.value = omega_discrete_at_order(chi, F, model, N, options, options.gh_order, result);
  if (options.estimate_quadrature_error && model.p > 0.0 &&
      (model.mutation.kind == MutationFamily::Kind::gaussian_step ||
       model.mutation.kind == MutationFamily::Kind::fixed_gaussian)) {
    DiscreteOmega coarse;
    const int half = std::max(2, options.gh_order / 2);
    const double v = omega_discrete_at_order(chi, F, model, N, options, half, coarse);
    result.quadrature_error = std::abs(result.value - v);
  }
  return result;
}

FinitePhylogeny embed_at_scale(const ClanGeometry& geom, int N, const TraitSpace& space) {
  require(N >= 1, ErrorCode::precondition_violated, "scale index must be positive");
  const std::size_t C = geom.size();
  require(C >= 1, ErrorCode::precondition_violated, "geometry needs at least one clan");
  require(geom.dist.size() == C * C, ErrorCode::precondition_violated, "geometry distance matrix shape");
  require(geom.real_trait.size() == C && geom.finite_trait.size() == C, ErrorCode::precondition_violated,
          "geometry trait lists shape");

  const double unit = 1.0 / static_cast<double>(N);
  const auto trait_at = [&](std::size_t i) {
    if (space.kind == TraitSpace::Kind::real) return Trait::real(geom.real_trait[i]);
    const int lab = geom.finite_trait[i];
    require(lab >= 0 && lab < space.size, ErrorCode::precondition_violated, "geometry trait label out of range");
    return Trait::finite(lab);
  };

  const auto count_at = [&](std::size_t i) {
    const double scaled = geom.mass_fraction[i] * static_cast<double>(N);
    const long long c = std::llround(scaled);
    require(c >= 1, ErrorCode::precondition_violated, "geometry clan mass rounds to zero at this scale");
    return c;
  };

  FinitePhylogeny chi = FinitePhylogeny::single_clan(unit, unit, count_at(0), trait_at(0));
  for (std::size_t i = 1; i < C; ++i) {
    std::vector<long long> row(i, 0);
    for (std::size_t j = 0; j < i; ++j) {
      const long long units = std::llround(geom.dist[i * C + j] * static_cast<double>(N));
      require(units >= 1, ErrorCode::precondition_violated, "geometry distance rounds to zero at this scale");
      row[j] = units;
    }
    chi.merge_or_insert(row, trait_at(i), count_at(i));
  }
  chi.validate();
  return chi;
}

const std::vector<ClanGeometry>& standard_geometries() {
  // Fractions and distances live on the 1/8 grid so every scale in
  // {8,16,32,64,128} reproduces the same physical state exactly.
  static const std::vector<ClanGeometry> geoms = [] {
    std::vector<ClanGeometry> g;
    const auto sym = [](std::size_t C, std::vector<double> upper) {
      // expand strictly-upper triangle (row-major) into a full matrix
      std::vector<double> full(C * C, 0.0);
      std::size_t k = 0;
      for (std::size_t i = 0; i < C; ++i)
        for (std::size_t j = i + 1; j < C; ++j) {
          full[i * C + j] = upper[k];
          full[j * C + i] = upper[k];
          ++k;
        }
      return full;
    };
    g.push_back({"single", {1.0}, sym(1, {}), {0.0}, {0}});
    g.push_back({"pair_even", {0.5, 0.5}, sym(2, {1.0}), {0.0, 0.5}, {0, 1}});
    g.push_back({"pair_skew", {0.75, 0.25}, sym(2, {0.25}), {-0.5, 0.75}, {0, 1}});
    g.push_back({"pair_far", {0.5, 0.5}, sym(2, {4.0}), {0.0, 2.0}, {0, 1}});
    g.push_back({"pair_tight", {0.875, 0.125}, sym(2, {0.125}), {0.0, 0.125}, {0, 1}});
    g.push_back({"line3", {0.25, 0.5, 0.25}, sym(3, {1.0, 2.0, 1.0}), {-1.0, 0.0, 1.0}, {0, 1, 0}});
    g.push_back({"triangle", {0.5, 0.25, 0.25}, sym(3, {1.0, 1.0, 1.0}), {0.0, 0.5, 1.0}, {0, 1, 1}});
    g.push_back({"star4",
                 {0.25, 0.25, 0.25, 0.25},
                 sym(4, {0.5, 0.5, 0.5, 1.0, 1.0, 1.0}),
                 {0.0, -0.5, 0.5, 1.0},
                 {0, 1, 0, 1}});
    g.push_back({"line5",
                 {0.25, 0.25, 0.25, 0.125, 0.125},
                 sym(5, {0.5, 1.0, 1.5, 2.0, 0.5, 1.0, 1.5, 0.5, 1.0, 0.5}),
                 {0.0, 0.25, 0.5, 0.75, 1.0},
                 {0, 1, 0, 1, 0}});
    g.push_back({"clusters",
                 {0.25, 0.125, 0.125, 0.25, 0.125, 0.125},
                 sym(6, {0.25, 0.25, 2.0, 2.0, 2.0,   // from a1
                         0.25, 2.0, 2.0, 2.0,         // from a2
                         2.0, 2.0, 2.0,               // from a3
                         0.25, 0.25,                  // from b1
                         0.25}),                      // from b2
                 {0.0, 0.25, 0.5, 2.0, 2.25, 2.5},
                 {0, 1, 0, 1, 0, 1}});
    return g;
  }();
  return geoms;
}

nlohmann::json GapReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& e : entries)
    rows.push_back({{"state", e.state},
                    {"function", e.function},
                    {"N", e.N},
                    {"discrete", e.discrete},
                    {"limit", e.limit},
                    {"gap", e.gap},
                    {"quadrature_error", e.quadrature_error}});
  nlohmann::json fits = nlohmann::json::array();
  for (const auto& s : slopes)
    fits.push_back({{"state", s.state},
                    {"function", s.function},
                    {"slope", s.slope},
                    {"gap_first", s.gap_first},
                    {"gap_last", s.gap_last}});
  return {{"entries", rows}, {"slopes", fits}, {"max_quadrature_error", max_quadrature_error}};
}

std::string GapReport::to_csv() const {
  std::ostringstream out;
  out << "state,function,N,discrete,limit,gap,quadrature_error\n";
  out.precision(12);
  for (const auto& e : entries)
    out << e.state << ',' << e.function << ',' << e.N << ',' << e.discrete << ',' << e.limit << ',' << e.gap
        << ',' << e.quadrature_error << '\n';
  return out.str();
}

GapReport convergence_gap(const RateModel& model, std::span<const ClanGeometry> geometries,
                          std::span<const TestFunction> functions, std::span<const int> scales) {
  GapReport report;
  DiscreteOmegaOptions options;
  options.estimate_quadrature_error = true;
  for (const auto& geom : geometries) {
    for (const auto& F : functions) {
      std::vector<double> xs, ys;
      GapSlope fit{geom.name, F.name, 0.0, 0.0, 0.0};
      for (int N : scales) {
        const FinitePhylogeny chi = embed_at_scale(geom, N, model.traits);
        const DiscreteOmega dn = omega_discrete(chi, F, model, N, options);
        const OmegaParts lim = omega_limit(chi, F, model);
        GapEntry entry;
        entry.state = geom.name;
        entry.function = F.name;
        entry.N = N;
        entry.discrete = dn.value;
        entry.limit = lim.total();
        entry.gap = std::abs(dn.value - lim.total());
        entry.quadrature_error = dn.quadrature_error;
        entry.parts = lim;
        report.max_quadrature_error = std::max(report.max_quadrature_error, dn.quadrature_error);
        report.entries.push_back(entry);
        xs.push_back(static_cast<double>(N));
        ys.push_back(entry.gap);
      }
      if (!xs.empty()) {
        fit.gap_first = ys.front();
        fit.gap_last = ys.back();
        fit.slope = fit_loglog_slope(xs, ys);
        report.slopes.push_back(fit);
      }
    }
  }
  return report;
}

double fit_loglog_slope(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size(), ErrorCode::precondition_violated, "slope fit needs matching lengths");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (y[i] <= 0.0) continue;  // exact-zero gaps carry no slope information
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  if (lx.size() < 2) return 0.0;
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / static_cast<double>(lx.size());
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / static_cast<double>(ly.size());
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  require(sxx > 0.0, ErrorCode::precondition_violated, "slope fit needs at least two distinct scales");
  return sxy / sxx;
}

}  // namespace phylosim
