#include "phylosim/rate_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace phylosim {

double GammaFn::operator()(double m, double r, const Trait& k1, const Trait& k2) const {
  (void)k1;
  switch (kind) {
    case Kind::zero:
      return 0.0;
    case Kind::constant:
      return value;
    case Kind::table:
      return values.at(static_cast<std::size_t>(k2.index()));
    case Kind::exp_distance:
      return value * std::exp(-r / range);
    case Kind::linear_distance:
      return value * r;
    case Kind::logistic_death:
      return values.at(static_cast<std::size_t>(k2.index())) + m * u;
  }
  return 0.0;
}

Trait MutationFamily::draw(const Trait& kappa, int N, RandomStream& rng) const {
  switch (kind) {
    case Kind::gaussian_step: {
      require(N >= 1, ErrorCode::precondition_violated, "mutation draw: scale N must be >= 1");
      return Trait::real(rng.normal(kappa.value(), sigma / std::sqrt(static_cast<double>(N))));
    }
    case Kind::fixed_gaussian:
      return Trait::real(rng.normal(kappa.value(), sigma));
    case Kind::rare_jump: {
      require(static_cast<double>(N) > theta, ErrorCode::precondition_violated,
              "mutation draw: rare_jump needs N > theta");
      if (rng.uniform() >= theta / static_cast<double>(N)) return kappa;
      [[fallthrough]];
    }
    case Kind::fixed_matrix: {
      const auto& row = matrix.at(static_cast<std::size_t>(kappa.index()));
      return Trait::finite(static_cast<int>(rng.pick_weighted(row, 1.0)));
    }
  }
  return kappa;
}

double MutationFamily::stay_probability(int N) const {
  switch (kind) {
    case Kind::gaussian_step:
    case Kind::fixed_gaussian:
      return 0.0;  // atomless
    case Kind::rare_jump:
      require(static_cast<double>(N) > theta, ErrorCode::precondition_violated,
              "stay_probability: rare_jump needs N > theta");
      return 1.0 - theta / static_cast<double>(N);
    case Kind::fixed_matrix:
      return 0.0;  // zero diagonal
  }
  return 0.0;
}

double MutationFamily::gaussian_limit(double f_second) const {
  require(kind == Kind::gaussian_step, ErrorCode::unsupported_function,
          "limit operator: only the gaussian_step family has a diffusion limit");
  return 0.5 * sigma * sigma * f_second;
}

double MutationFamily::jump_limit(std::span<const double> f_values, int kappa_index) const {
  require(kind == Kind::rare_jump, ErrorCode::unsupported_function,
          "limit operator: only the rare_jump family has a jump limit");
  const auto& row = matrix.at(static_cast<std::size_t>(kappa_index));
  require(row.size() == f_values.size(), ErrorCode::precondition_violated, "jump_limit: table size mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < row.size(); ++j)
    acc += row[j] * (f_values[j] - f_values[static_cast<std::size_t>(kappa_index)]);
  return theta * acc;
}

std::string ValidationReport::to_string() const {
  if (ok) return "ok";
  std::ostringstream out;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i > 0) out << "; ";
    out << violations[i];
  }
  return out.str();
}

namespace {

std::vector<Trait> probe_traits(const TraitSpace& space) {
  std::vector<Trait> probes;
  if (space.is_real()) {
    for (double v = -4.0; v <= 4.0 + 1e-12; v += 0.5) probes.push_back(Trait::real(v));
  } else {
    for (int i = 0; i < space.size; ++i) probes.push_back(Trait::finite(i));
  }
  return probes;
}

const double kProbeMasses[] = {0.0, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0};
const double kProbeDistances[] = {0.0, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0};

}  // namespace

ValidationReport validate(const RateModel& model) {
  ValidationReport report;
  auto violation = [&report](const std::string& msg) {
    report.ok = false;
    report.violations.push_back(msg);
  };

  if (!model.traits.is_real() && model.traits.size < 1)
    violation("config: finite trait space needs at least one label");
  const auto probes = probe_traits(model.traits);

  if (model.beta.kind == BetaFn::Kind::table) {
    if (model.traits.is_real())
      violation("config: beta table requires a finite trait space");
    else if (model.beta.values.size() != static_cast<std::size_t>(model.traits.size))
      violation("config: beta table size mismatch");
  }

  double beta_min = std::numeric_limits<double>::infinity();
  double beta_max = 0.0;
  for (const auto& k : probes) {
    const double b = model.beta(k);
    beta_min = std::min(beta_min, b);
    beta_max = std::max(beta_max, b);
  }
  if (beta_max > model.bounds.beta_bar + 1e-12)
    violation("branching bound: sup beta exceeds declared beta_bar (" + std::to_string(beta_max) + " > " +
              std::to_string(model.bounds.beta_bar) + ")");
  if (!(model.bounds.beta_lower > 0.0))
    violation("branching bound: beta_lower must be strictly positive");
  else if (beta_min < model.bounds.beta_lower - 1e-12)
    violation("branching bound: inf beta falls below declared beta_lower (" + std::to_string(beta_min) + " < " +
              std::to_string(model.bounds.beta_lower) + ")");

  auto table_ok = [&](const GammaFn& g) {
    return !(g.kind == GammaFn::Kind::table || g.kind == GammaFn::Kind::logistic_death) ||
           (!model.traits.is_real() && g.values.size() == static_cast<std::size_t>(model.traits.size));
  };
  if (!table_ok(model.gamma_birth)) violation("config: gamma_birth table size mismatch");
  if (!table_ok(model.gamma_death)) violation("config: gamma_death table size mismatch");

  if (table_ok(model.gamma_birth)) {
    double gb_max = 0.0;
    for (double m : kProbeMasses)
      for (double r : kProbeDistances)
        for (const auto& k1 : probes)
          for (const auto& k2 : probes) gb_max = std::max(gb_max, model.gamma_birth(m, r, k1, k2));
    if (gb_max > model.bounds.gamma_b_bar + 1e-12)
      violation("competition bound: sup gamma_birth exceeds declared gamma_b_bar (" + std::to_string(gb_max) + " > " +
                std::to_string(model.bounds.gamma_b_bar) + ")");
  }
  if (table_ok(model.gamma_death)) {
    for (double m : kProbeMasses) {
      double gd_max = 0.0;
      for (double r : kProbeDistances)
        for (const auto& k1 : probes)
          for (const auto& k2 : probes) gd_max = std::max(gd_max, model.gamma_death(m, r, k1, k2));
      if (gd_max > model.death_envelope(m) + 1e-12) {
        violation("death envelope: gamma_death exceeds (1 v m) * gamma_d_bar at m = " + std::to_string(m));
        break;
      }
    }
  }

  if (!(model.p >= 0.0 && model.p <= 1.0)) violation("config: p must lie in [0, 1]");

  const auto& mut = model.mutation;
  const bool needs_matrix = mut.kind == MutationFamily::Kind::rare_jump || mut.kind == MutationFamily::Kind::fixed_matrix;
  const bool needs_sigma = !needs_matrix;
  if (needs_sigma) {
    if (!model.traits.is_real()) violation("config: gaussian mutation families require real traits");
    if (!(mut.sigma > 0.0)) violation("config: mutation sigma must be positive");
  } else {
    if (model.traits.is_real()) {
      violation("config: jump mutation families require a finite trait space");
    } else if (mut.matrix.size() != static_cast<std::size_t>(model.traits.size)) {
      violation("config: mutation matrix size mismatch");
    } else {
      for (std::size_t i = 0; i < mut.matrix.size(); ++i) {
        const auto& row = mut.matrix[i];
        if (row.size() != mut.matrix.size()) {
          violation("config: mutation matrix must be square");
          break;
        }
        double sum = 0.0;
        for (double v : row) sum += v;
        if (std::abs(sum - 1.0) > 1e-9 || row[i] != 0.0) {
          violation("config: mutation matrix rows must be stochastic with zero diagonal");
          break;
        }
      }
      if (mut.kind == MutationFamily::Kind::rare_jump && !(mut.theta > 0.0))
        violation("config: rare_jump theta must be positive");
    }
  }

  return report;
}

Trait mixed_mutation_draw(const RateModel& model, const Trait& kappa, int N, RandomStream& rng) {
  if (model.p < 1.0 && rng.uniform() >= model.p) return kappa;
  return model.mutation.draw(kappa, N, rng);
}

namespace {

nlohmann::json beta_to_json(const BetaFn& b) {
  nlohmann::json j;
  if (b.kind == BetaFn::Kind::constant) {
    j["kind"] = "constant";
    j["value"] = b.value;
  } else {
    j["kind"] = "table";
    j["values"] = b.values;
  }
  return j;
}

BetaFn beta_from_json(const nlohmann::json& j) {
  BetaFn b;
  const auto kind = j.at("kind").get<std::string>();
  for (const auto& [key, value] : j.items()) {
    (void)value;
    require(key == "kind" || key == "value" || key == "values", ErrorCode::config_error,
            "beta: unknown key \"" + key + "\"");
  }
  if (kind == "constant") {
    b.kind = BetaFn::Kind::constant;
    b.value = j.at("value").get<double>();
  } else if (kind == "table") {
    b.kind = BetaFn::Kind::table;
    b.values = j.at("values").get<std::vector<double>>();
  } else {
    fail(ErrorCode::config_error, "beta: unknown kind \"" + kind + "\"");
  }
  return b;
}

nlohmann::json gamma_to_json(const GammaFn& g) {
  nlohmann::json j;
  switch (g.kind) {
    case GammaFn::Kind::zero:
      j["kind"] = "zero";
      break;
    case GammaFn::Kind::constant:
      j["kind"] = "constant";
      j["value"] = g.value;
      break;
    case GammaFn::Kind::table:
      j["kind"] = "table";
      j["values"] = g.values;
      break;
    case GammaFn::Kind::exp_distance:
      j["kind"] = "exp_distance";
      j["scale"] = g.value;
      j["range"] = g.range;
      break;
    case GammaFn::Kind::linear_distance:
      j["kind"] = "linear_distance";
      j["slope"] = g.value;
      break;
    case GammaFn::Kind::logistic_death:
      j["kind"] = "logistic_death";
      j["d"] = g.values;
      j["u"] = g.u;
      break;
  }
  return j;
}

GammaFn gamma_from_json(const nlohmann::json& j) {
  GammaFn g;
  const auto kind = j.at("kind").get<std::string>();
  for (const auto& [key, value] : j.items()) {
    (void)value;
    require(key == "kind" || key == "value" || key == "values" || key == "scale" || key == "range" ||
                key == "slope" || key == "d" || key == "u",
            ErrorCode::config_error, "gamma: unknown key \"" + key + "\"");
  }
  if (kind == "zero") {
    g.kind = GammaFn::Kind::zero;
  } else if (kind == "constant") {
    g.kind = GammaFn::Kind::constant;
    g.value = j.at("value").get<double>();
  } else if (kind == "table") {
    g.kind = GammaFn::Kind::table;
    g.values = j.at("values").get<std::vector<double>>();
  } else if (kind == "exp_distance") {
    g.kind = GammaFn::Kind::exp_distance;
    g.value = j.at("scale").get<double>();
    g.range = j.at("range").get<double>();
    require(g.range > 0.0, ErrorCode::config_error, "gamma: exp_distance range must be positive");
  } else if (kind == "linear_distance") {
    g.kind = GammaFn::Kind::linear_distance;
    g.value = j.at("slope").get<double>();
  } else if (kind == "logistic_death") {
    g.kind = GammaFn::Kind::logistic_death;
    g.values = j.at("d").get<std::vector<double>>();
    g.u = j.at("u").get<double>();
  } else {
    fail(ErrorCode::config_error, "gamma: unknown kind \"" + kind + "\"");
  }
  return g;
}

nlohmann::json mutation_to_json(const MutationFamily& m) {
  nlohmann::json j;
  switch (m.kind) {
    case MutationFamily::Kind::gaussian_step:
      j["kind"] = "gaussian_step";
      j["sigma"] = m.sigma;
      break;
    case MutationFamily::Kind::fixed_gaussian:
      j["kind"] = "fixed_gaussian";
      j["sigma"] = m.sigma;
      break;
    case MutationFamily::Kind::rare_jump:
      j["kind"] = "rare_jump";
      j["theta"] = m.theta;
      j["matrix"] = m.matrix;
      break;
    case MutationFamily::Kind::fixed_matrix:
      j["kind"] = "fixed_matrix";
      j["matrix"] = m.matrix;
      break;
  }
  return j;
}

MutationFamily mutation_from_json(const nlohmann::json& j) {
  MutationFamily m;
  const auto kind = j.at("kind").get<std::string>();
  for (const auto& [key, value] : j.items()) {
    (void)value;
    require(key == "kind" || key == "sigma" || key == "theta" || key == "matrix", ErrorCode::config_error,
            "mutation: unknown key \"" + key + "\"");
  }
  if (kind == "gaussian_step") {
    m.kind = MutationFamily::Kind::gaussian_step;
    m.sigma = j.at("sigma").get<double>();
  } else if (kind == "fixed_gaussian") {
    m.kind = MutationFamily::Kind::fixed_gaussian;
    m.sigma = j.at("sigma").get<double>();
  } else if (kind == "rare_jump") {
    m.kind = MutationFamily::Kind::rare_jump;
    m.theta = j.at("theta").get<double>();
    m.matrix = j.at("matrix").get<std::vector<std::vector<double>>>();
  } else if (kind == "fixed_matrix") {
    m.kind = MutationFamily::Kind::fixed_matrix;
    m.matrix = j.at("matrix").get<std::vector<std::vector<double>>>();
  } else {
    fail(ErrorCode::config_error, "mutation: unknown kind \"" + kind + "\"");
  }
  return m;
}

}  // namespace

nlohmann::json model_to_json(const RateModel& model) {
  nlohmann::json j;
  j["beta"] = beta_to_json(model.beta);
  j["gamma_birth"] = gamma_to_json(model.gamma_birth);
  j["gamma_death"] = gamma_to_json(model.gamma_death);
  j["p"] = model.p;
  j["mutation"] = mutation_to_json(model.mutation);
  j["bounds"] = {{"beta_bar", model.bounds.beta_bar},
                 {"beta_lower", model.bounds.beta_lower},
                 {"gamma_b_bar", model.bounds.gamma_b_bar},
                 {"gamma_d_bar", model.bounds.gamma_d_bar}};
  if (model.traits.is_real())
    j["traits"] = {{"kind", "real"}};
  else
    j["traits"] = {{"kind", "finite"}, {"size", model.traits.size}};
  return j;
}

RateModel model_from_json(const nlohmann::json& j) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    require(key == "beta" || key == "gamma_birth" || key == "gamma_death" || key == "p" || key == "mutation" ||
                key == "bounds" || key == "traits",
            ErrorCode::config_error, "model: unknown key \"" + key + "\"");
  }
  RateModel m;
  const auto& traits = j.at("traits");
  const auto tkind = traits.at("kind").get<std::string>();
  if (tkind == "real") {
    m.traits.kind = TraitSpace::Kind::real;
  } else if (tkind == "finite") {
    m.traits.kind = TraitSpace::Kind::finite;
    m.traits.size = traits.at("size").get<int>();
  } else {
    fail(ErrorCode::config_error, "traits: unknown kind \"" + tkind + "\"");
  }
  m.beta = beta_from_json(j.at("beta"));
  m.gamma_birth = gamma_from_json(j.at("gamma_birth"));
  m.gamma_death = gamma_from_json(j.at("gamma_death"));
  m.p = j.at("p").get<double>();
  m.mutation = mutation_from_json(j.at("mutation"));
  const auto& b = j.at("bounds");
  for (const auto& [key, value] : b.items()) {
    (void)value;
    require(key == "beta_bar" || key == "beta_lower" || key == "gamma_b_bar" || key == "gamma_d_bar",
            ErrorCode::config_error, "bounds: unknown key \"" + key + "\"");
  }
  m.bounds.beta_bar = b.at("beta_bar").get<double>();
  m.bounds.beta_lower = b.at("beta_lower").get<double>();
  m.bounds.gamma_b_bar = b.at("gamma_b_bar").get<double>();
  m.bounds.gamma_d_bar = b.at("gamma_d_bar").get<double>();
  return m;
}

RateModel preset(const std::string& name) {
  RateModel m;
  const std::vector<std::vector<double>> swap2{{0.0, 1.0}, {1.0, 0.0}};
  if (name == "neutral") {
    m.traits.kind = TraitSpace::Kind::real;
    m.beta = {BetaFn::Kind::constant, 1.0, {}};
    m.p = 0.3;
    m.mutation.kind = MutationFamily::Kind::gaussian_step;
    m.mutation.sigma = 1.0;
    m.bounds = {1.0, 1.0, 0.0, 0.0};
  } else if (name == "fleming_viot_like") {
    m.traits = {TraitSpace::Kind::finite, 2};
    m.beta = {BetaFn::Kind::constant, 1.0, {}};
    m.gamma_death.kind = GammaFn::Kind::exp_distance;
    m.gamma_death.value = 0.5;
    m.gamma_death.range = 1.0;
    m.p = 1.0;
    m.mutation.kind = MutationFamily::Kind::rare_jump;
    m.mutation.theta = 1.0;
    m.mutation.matrix = swap2;
    m.bounds = {1.0, 1.0, 0.0, 0.5};
  } else if (name == "logistic") {
    m.traits = {TraitSpace::Kind::finite, 2};
    m.beta.kind = BetaFn::Kind::table;
    m.beta.values = {1.0, 0.8};
    m.gamma_birth.kind = GammaFn::Kind::table;
    m.gamma_birth.values = {0.5, 0.4};
    m.gamma_death.kind = GammaFn::Kind::logistic_death;
    m.gamma_death.values = {0.1, 0.2};
    m.gamma_death.u = 0.3;
    m.p = 0.3;
    m.mutation.kind = MutationFamily::Kind::rare_jump;
    m.mutation.theta = 1.0;
    m.mutation.matrix = swap2;
    m.bounds = {1.0, 0.8, 0.5, 0.5};
  } else if (name == "cross_immunity") {
    m.traits.kind = TraitSpace::Kind::real;
    m.beta = {BetaFn::Kind::constant, 1.0, {}};
    m.gamma_death.kind = GammaFn::Kind::exp_distance;
    m.gamma_death.value = 0.8;
    m.gamma_death.range = 2.0;
    m.p = 0.5;
    m.mutation.kind = MutationFamily::Kind::gaussian_step;
    m.mutation.sigma = 1.0;
    m.bounds = {1.0, 1.0, 0.0, 0.8};
  } else {
    fail(ErrorCode::config_error, "unknown preset \"" + name + "\"");
  }
  return m;
}

std::vector<std::string> preset_names() { return {"neutral", "fleming_viot_like", "logistic", "cross_immunity"}; }

}  // namespace phylosim
