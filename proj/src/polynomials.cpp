#include "phylosim/polynomials.hpp"

#include <algorithm>
#include <cmath>

namespace phylosim {

namespace {

// m^e for integer e, with negative exponents mapped to zero: every place a
// negative exponent could appear below its coefficient vanishes as well.
double pow_nn(double m, int e) {
  if (e < 0) return 0.0;
  double v = 1.0;
  for (int i = 0; i < e; ++i) v *= m;
  return v;
}

}  // namespace

double MassFactor::operator()(double m) const {
  if (kind == Kind::capped_power) return std::pow(std::min(m, cap), q);
  return pow_nn(m, a) * std::exp(-lambda * m);
}

double MassFactor::d1(double m) const {
  require(kind == Kind::power_exp, ErrorCode::unsupported_function, "mass factor: capped powers are not smooth");
  return (a * pow_nn(m, a - 1) - lambda * pow_nn(m, a)) * std::exp(-lambda * m);
}

double MassFactor::d2(double m) const {
  require(kind == Kind::power_exp, ErrorCode::unsupported_function, "mass factor: capped powers are not smooth");
  const double poly = a * (a - 1.0) * pow_nn(m, a - 2) - 2.0 * lambda * a * pow_nn(m, a - 1) +
                      lambda * lambda * pow_nn(m, a);
  return poly * std::exp(-lambda * m);
}

double MassFactor::d3(double m) const {
  require(kind == Kind::power_exp, ErrorCode::unsupported_function, "mass factor: capped powers are not smooth");
  const double l = lambda;
  const double poly = a * (a - 1.0) * (a - 2.0) * pow_nn(m, a - 3) - 3.0 * l * a * (a - 1.0) * pow_nn(m, a - 2) +
                      3.0 * l * l * a * pow_nn(m, a - 1) - l * l * l * pow_nn(m, a);
  return poly * std::exp(-l * m);
}

double DistanceFactor::operator()(std::span<const double> r_pairs) const {
  if (lambdas.empty()) return 1.0;
  require(lambdas.size() == r_pairs.size(), ErrorCode::precondition_violated, "distance factor: arity mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < lambdas.size(); ++k) s += lambdas[k] * r_pairs[k];
  return std::exp(-s);
}

double DistanceFactor::deriv(std::span<const double> r_pairs, std::size_t pair) const {
  if (lambdas.empty()) return 0.0;
  return -lambdas.at(pair) * (*this)(r_pairs);
}

double TraitFactor::operator()(const Trait& t) const {
  switch (kind) {
    case Kind::one:
      return 1.0;
    case Kind::cauchy_bump: {
      const double u = t.value() - center;
      return 1.0 / (1.0 + u * u);
    }
    case Kind::cosine:
      return std::cos(omega * t.value() + phase);
    case Kind::table:
      return values.at(static_cast<std::size_t>(t.index()));
  }
  return 1.0;
}

double TraitFactor::d2(const Trait& t) const {
  switch (kind) {
    case Kind::one:
      return 0.0;
    case Kind::cauchy_bump: {
      const double u = t.value() - center;
      const double den = 1.0 + u * u;
      return (6.0 * u * u - 2.0) / (den * den * den);
    }
    case Kind::cosine:
      return -omega * omega * std::cos(omega * t.value() + phase);
    case Kind::table:
      fail(ErrorCode::unsupported_function, "trait factor: tables have no second derivative");
  }
  return 0.0;
}

std::size_t pair_index(std::size_t i, std::size_t j, std::size_t n) {
  require(i < j && j < n, ErrorCode::index_out_of_range, "pair_index: need i < j < n");
  return i * n - i * (i + 1) / 2 + (j - i - 1);
}

void TestFunction::check_shape() const {
  if (!phi.lambdas.empty())
    require(phi.lambdas.size() == pair_count(degree), ErrorCode::precondition_violated,
            "test function: distance factor arity mismatch");
  if (!f.empty())
    require(f.size() == degree, ErrorCode::precondition_violated, "test function: trait factor arity mismatch");
  for (double l : phi.lambdas)
    require(l >= 0.0, ErrorCode::precondition_violated, "test function: negative distance decay rate");
}

void TestFunction::check_traits(const TraitSpace& space) const {
  for (const auto& factor : f) {
    if (factor.needs_real())
      require(space.is_real(), ErrorCode::unsupported_function, "test function: real-trait factor on finite traits");
    if (factor.needs_finite()) {
      require(!space.is_real(), ErrorCode::unsupported_function, "test function: table factor on real traits");
      require(factor.values.size() == static_cast<std::size_t>(space.size), ErrorCode::precondition_violated,
              "test function: table factor size mismatch");
    }
  }
}

double TestFunction::empty_state_value(const TraitSpace& space) const {
  const Trait base = space.is_real() ? Trait::real(0.0) : Trait::finite(0);
  double value = g(0.0);
  for (const auto& factor : f) value *= factor(base);
  return value;  // phi at the all-zero distance tuple is 1
}

EvalResult evaluate(const TestFunction& F, const FinitePhylogeny& chi, RandomStream* rng,
                    const EvalOptions& options) {
  F.check_shape();
  if (chi.empty()) {
    // no marks to read the space from; table factors pin it to their label set
    TraitSpace space{TraitSpace::Kind::real, 0};
    for (const auto& factor : F.f)
      if (factor.needs_finite()) {
        space = {TraitSpace::Kind::finite, static_cast<int>(factor.values.size())};
        break;
      }
    return {F.empty_state_value(space), 0.0, true};
  }

  const double m = chi.total_mass();
  const double gm = F.g(m);
  const std::size_t n = F.degree;
  if (n == 0) return {gm, 0.0, true};

  const auto w = chi.sampling_weights();
  const std::size_t c = chi.clan_count();

  double terms = 1.0;
  for (std::size_t i = 0; i < n; ++i) terms *= static_cast<double>(c);

  std::vector<double> r_pairs(pair_count(n), 0.0);
  std::vector<Trait> kappa(n, chi.trait(0));
  std::vector<std::size_t> pick(n, 0);

  if (terms <= static_cast<double>(options.exact_term_limit)) {
    std::vector<double> stable_terms;
    double acc = 0.0;
    bool done = false;
    while (!done) {
      double weight = 1.0;
      for (std::size_t i = 0; i < n; ++i) {
        weight *= w[pick[i]];
        kappa[i] = chi.trait(pick[i]);
      }
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
          r_pairs[pair_index(i, j, n)] = chi.phys_dist(pick[i], pick[j]);
      double v = F.phi(r_pairs);
      for (std::size_t i = 0; i < F.f.size(); ++i) v *= F.f[i](kappa[i]);
      const double term = weight * v;
      if (options.stable_summation)
        stable_terms.push_back(term);
      else
        acc += term;
      // odometer over ordered tuples with repetition
      done = true;
      for (std::size_t i = 0; i < n; ++i) {
        if (++pick[i] < c) {
          done = false;
          break;
        }
        pick[i] = 0;
      }
    }
    if (options.stable_summation) {
      std::sort(stable_terms.begin(), stable_terms.end());
      for (double t : stable_terms) acc += t;
    }
    return {gm * acc, 0.0, true};
  }

  require(rng != nullptr, ErrorCode::precondition_violated,
          "evaluate: tuple space too large for exact enumeration and no sampler supplied");
  double sum = 0.0, sumsq = 0.0;
  for (std::size_t s = 0; s < options.mc_samples; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      pick[i] = rng->pick_weighted(w, 1.0);
      kappa[i] = chi.trait(pick[i]);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        r_pairs[pair_index(i, j, n)] = chi.phys_dist(pick[i], pick[j]);
    double v = F.phi(r_pairs);
    for (std::size_t i = 0; i < F.f.size(); ++i) v *= F.f[i](kappa[i]);
    sum += v;
    sumsq += v * v;
  }
  const double ns = static_cast<double>(options.mc_samples);
  const double mean = sum / ns;
  const double var = std::max(0.0, sumsq / ns - mean * mean);
  return {gm * mean, std::abs(gm) * std::sqrt(var / ns), false};
}

TupleArgs replacement_map(const TupleArgs& args, std::size_t l1, std::size_t l2) {
  const std::size_t n = args.n;
  require(l1 < n && l2 < n, ErrorCode::index_out_of_range, "replacement_map: slot out of range");
  TupleArgs out;
  out.n = n;
  out.kappa = args.kappa;
  out.kappa[l2] = args.kappa[l1];
  out.r.assign(pair_count(n), 0.0);
  auto redirect = [&](std::size_t i) { return i == l2 ? l1 : i; };
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const std::size_t a = redirect(i), b = redirect(j);
      out.r[pair_index(i, j, n)] = (a == b) ? 0.0 : args.r[pair_index(std::min(a, b), std::max(a, b), n)];
    }
  return out;
}

TupleArgs index_shift(const TupleArgs& args, std::size_t ell) {
  require(ell <= args.n, ErrorCode::insufficient_arity, "index_shift: not enough slots to drop");
  const std::size_t n2 = args.n - ell;
  TupleArgs out;
  out.n = n2;
  out.kappa.assign(args.kappa.begin() + static_cast<std::ptrdiff_t>(ell), args.kappa.end());
  out.r.assign(pair_count(n2), 0.0);
  for (std::size_t i = 0; i < n2; ++i)
    for (std::size_t j = i + 1; j < n2; ++j)
      out.r[pair_index(i, j, n2)] = args.r[pair_index(i + ell, j + ell, args.n)];
  return out;
}

double eval_args(const TestFunction& F, double m, const TupleArgs& args) {
  F.check_shape();
  require(args.n == F.degree, ErrorCode::precondition_violated, "eval_args: arity mismatch");
  require(args.r.size() == pair_count(args.n) && args.kappa.size() == args.n, ErrorCode::precondition_violated,
          "eval_args: malformed arguments");
  double v = F.g(m) * F.phi(args.r);
  for (std::size_t i = 0; i < F.f.size(); ++i) v *= F.f[i](args.kappa[i]);
  return v;
}

CertifyReport certify_tilde(const TestFunction& F, double gamma_d_bar) {
  CertifyReport report;
  auto reject = [&report](const std::string& why) {
    report.ok = false;
    report.failures.push_back(why);
  };
  F.check_shape();

  if (F.g.kind == MassFactor::Kind::capped_power) {
    reject("mass factor: capped powers are not three times differentiable");
    return report;
  }
  const int a = F.g.a;
  const double lambda = F.g.lambda;
  require(a >= 0 && lambda >= 0.0, ErrorCode::precondition_violated, "certify: malformed mass factor");

  if (a >= 1 && lambda == 0.0) reject("mass factor: m^a with no exponential decay is unbounded");
  if (a == 1) reject("mass factor: g'(0) = 1, the certificate needs g'(0) = 0");
  if (a == 0 && lambda > 0.0) reject("mass factor: g'(0) = -lambda, the certificate needs g'(0) = 0");
  if (a == 0 && lambda == 0.0 && gamma_d_bar > 0.0)
    reject("mass factor: constant g fails the (1 v gamma_tilde)|g| decay bound when gamma_d_bar > 0");
  // For a >= 2 with lambda > 0 every remaining decay condition holds: g', g''
  // and the local sup of g''' all carry the factor e^{-lambda m}, which beats
  // the linear growth of m * gamma_tilde(m).

  return report;
}

nlohmann::json TestFunction::to_json() const {
  nlohmann::json j;
  j["degree"] = degree;
  if (!name.empty()) j["name"] = name;
  if (g.kind == MassFactor::Kind::power_exp)
    j["g"] = {{"kind", "power_exp"}, {"a", g.a}, {"lambda", g.lambda}};
  else
    j["g"] = {{"kind", "capped_power"}, {"q", g.q}, {"cap", g.cap}};
  if (!phi.lambdas.empty()) j["phi"] = phi.lambdas;
  if (!f.empty()) {
    auto arr = nlohmann::json::array();
    for (const auto& factor : f) {
      nlohmann::json fj;
      switch (factor.kind) {
        case TraitFactor::Kind::one:
          fj["kind"] = "one";
          break;
        case TraitFactor::Kind::cauchy_bump:
          fj["kind"] = "cauchy_bump";
          fj["center"] = factor.center;
          break;
        case TraitFactor::Kind::cosine:
          fj["kind"] = "cosine";
          fj["omega"] = factor.omega;
          fj["phase"] = factor.phase;
          break;
        case TraitFactor::Kind::table:
          fj["kind"] = "table";
          fj["values"] = factor.values;
          break;
      }
      arr.push_back(std::move(fj));
    }
    j["f"] = std::move(arr);
  }
  return j;
}

TestFunction TestFunction::from_json(const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    require(key == "degree" || key == "name" || key == "g" || key == "phi" || key == "f", ErrorCode::config_error,
            "test function: unknown key \"" + key + "\"");
  }
  TestFunction F;
  F.degree = j.at("degree").get<std::size_t>();
  if (j.contains("name")) F.name = j.at("name").get<std::string>();
  const auto& g = j.at("g");
  const auto gkind = g.at("kind").get<std::string>();
  if (gkind == "power_exp") {
    F.g = MassFactor::power_exp(g.at("a").get<int>(), g.at("lambda").get<double>());
  } else if (gkind == "capped_power") {
    F.g = MassFactor::capped_power(g.at("q").get<int>(), g.at("cap").get<double>());
  } else {
    fail(ErrorCode::config_error, "test function: unknown mass factor kind \"" + gkind + "\"");
  }
  if (j.contains("phi")) F.phi.lambdas = j.at("phi").get<std::vector<double>>();
  if (j.contains("f")) {
    for (const auto& fj : j.at("f")) {
      const auto kind = fj.at("kind").get<std::string>();
      if (kind == "one") {
        F.f.push_back(TraitFactor::one());
      } else if (kind == "cauchy_bump") {
        F.f.push_back(TraitFactor::cauchy_bump(fj.at("center").get<double>()));
      } else if (kind == "cosine") {
        F.f.push_back(TraitFactor::cosine(fj.at("omega").get<double>(), fj.at("phase").get<double>()));
      } else if (kind == "table") {
        F.f.push_back(TraitFactor::table(fj.at("values").get<std::vector<double>>()));
      } else {
        fail(ErrorCode::config_error, "test function: unknown trait factor kind \"" + kind + "\"");
      }
    }
  }
  F.check_shape();
  return F;
}

}  // namespace phylosim
