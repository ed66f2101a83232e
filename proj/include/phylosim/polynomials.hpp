#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "phylosim/phylogeny.hpp"
#include "phylosim/random.hpp"
#include "phylosim/trait.hpp"

namespace phylosim {

// Mass factor g(m).
//   power_exp     m^a * exp(-lambda m), a in {0,2,3} for the certified family
//                 (other exponents construct fine and are rejected by the
//                 certificate, e.g. a = 1 has g'(0) = 1)
//   capped_power  (m ^ L)^q, the truncated moment family used to exercise the
//                 discrete generator; not differentiable, never certified
struct MassFactor {
  enum class Kind { power_exp, capped_power };
  Kind kind = Kind::power_exp;
  int a = 0;
  double lambda = 0.0;
  int q = 1;
  double cap = 1.0;

  static MassFactor one() { return {}; }
  static MassFactor power_exp(int a, double lambda) { return {Kind::power_exp, a, lambda, 1, 1.0}; }
  static MassFactor capped_power(int q, double cap) { return {Kind::capped_power, 0, 0.0, q, cap}; }

  double operator()(double m) const;
  double d1(double m) const;
  double d2(double m) const;
  double d3(double m) const;
};

// Distance factor phi(r) = exp(-sum l_k r_k) over the pair coordinates of an
// n-tuple, pairs ordered (0,1),(0,2),...,(0,n-1),(1,2),...  All decay rates
// must be nonnegative so phi stays in (0,1].
struct DistanceFactor {
  std::vector<double> lambdas;

  double operator()(std::span<const double> r_pairs) const;
  // d phi / d r_k
  double deriv(std::span<const double> r_pairs, std::size_t pair_index) const;
};

// One trait coordinate of f.  Real-trait kinds carry analytic second
// derivatives for the diffusion limit; the table kind serves finite traits.
struct TraitFactor {
  enum class Kind { one, cauchy_bump, cosine, table };
  Kind kind = Kind::one;
  double center = 0.0;
  double omega = 1.0;
  double phase = 0.0;
  std::vector<double> values;

  static TraitFactor one() { return {}; }
  static TraitFactor cauchy_bump(double center) { return {Kind::cauchy_bump, center, 1.0, 0.0, {}}; }
  static TraitFactor cosine(double omega, double phase) { return {Kind::cosine, 0.0, omega, phase, {}}; }
  static TraitFactor table(std::vector<double> values) { return {Kind::table, 0.0, 1.0, 0.0, std::move(values)}; }

  double operator()(const Trait& t) const;
  double d2(const Trait& t) const;  // real kinds only
  bool needs_real() const { return kind == Kind::cauchy_bump || kind == Kind::cosine; }
  bool needs_finite() const { return kind == Kind::table; }
};

inline std::size_t pair_count(std::size_t n) { return n * (n - 1) / 2; }
// index of unordered pair (i,j), i < j, in the canonical ordering above
std::size_t pair_index(std::size_t i, std::size_t j, std::size_t n);

// F(chi) = E[g(m) phi(r) f1(k_1)...fn(k_n)] under n i.i.d. clan samples from
// the sampling measure of chi; the expectation runs over the n-tuple samples,
// the mass factor is deterministic per state.
struct TestFunction {
  std::size_t degree = 0;
  MassFactor g;
  DistanceFactor phi;            // pair_count(degree) rates; empty means all zero
  std::vector<TraitFactor> f;    // one factor per slot; empty means all one
  std::string name;

  void check_shape() const;
  void check_traits(const TraitSpace& space) const;
  // value of F on the zero-mass state: g(0) * phi(0) * prod f_i(base trait);
  // base trait is 0.0 (real) or label 0 (finite).  For the certified families
  // g(0) = 0 except g == 1, so the convention is only visible through the
  // one family that survives without mass decay.
  double empty_state_value(const TraitSpace& space) const;

  nlohmann::json to_json() const;
  static TestFunction from_json(const nlohmann::json& j);
};

struct EvalResult {
  double value = 0.0;
  double std_error = 0.0;  // zero on the exact path
  bool exact = true;
};

struct EvalOptions {
  // tuple spaces up to this many terms enumerate exactly, larger ones sample
  std::size_t exact_term_limit = 1'000'000;
  std::size_t mc_samples = 100'000;
  // deterministic summation order independent of clan labelling (sort-and-sum)
  bool stable_summation = false;
};

// Exact enumeration over ordered clan tuples with repetition, falling back to
// Monte Carlo above the term limit (rng required there).
EvalResult evaluate(const TestFunction& F, const FinitePhylogeny& chi, RandomStream* rng = nullptr,
                    const EvalOptions& options = {});

// Explicit h-arguments of a degree-n function: pair distances and trait marks.
struct TupleArgs {
  std::size_t n = 0;
  std::vector<double> r;      // pair-indexed physical distances
  std::vector<Trait> kappa;
};

// theta_{l1,l2}: copies slot l1 over slot l2 (distances follow suit); 0-based.
TupleArgs replacement_map(const TupleArgs& args, std::size_t l1, std::size_t l2);
// tau_ell: drops the first ell slots.
TupleArgs index_shift(const TupleArgs& args, std::size_t ell);
// h(m, r, kappa) for explicit arguments.
double eval_args(const TestFunction& F, double m, const TupleArgs& args);

struct CertifyReport {
  bool ok = true;
  std::vector<std::string> failures;
};

// Closed-form decay certificate for the PDE-domain class, with death envelope
// gamma_tilde(m) = (1 v m) * gamma_d_bar.  Per family:
//   m^a e^{-lambda m}:  a >= 2 and lambda > 0 pass; a = 1 fails g'(0) = 0;
//                       a >= 1 with lambda = 0 is unbounded; a = 0 needs
//                       lambda = 0 (else g'(0) != 0) and then gamma_d_bar = 0.
//   capped powers:      never pass (not three times differentiable).
CertifyReport certify_tilde(const TestFunction& F, double gamma_d_bar);

}  // namespace phylosim
