#include <doctest.h>

#include <cmath>
#include <set>
#include <vector>

#include "phylosim/errors.hpp"
#include "phylosim/generators.hpp"
#include "phylosim/quadrature.hpp"

using namespace phylosim;

namespace {

RateModel constant_model(double beta, double gamma_b, double gamma_d, double p) {
  RateModel model;
  model.traits.kind = TraitSpace::Kind::real;
  model.beta.kind = BetaFn::Kind::constant;
  model.beta.value = beta;
  if (gamma_b > 0) {
    model.gamma_birth.kind = GammaFn::Kind::constant;
    model.gamma_birth.value = gamma_b;
  }
  if (gamma_d > 0) {
    model.gamma_death.kind = GammaFn::Kind::constant;
    model.gamma_death.value = gamma_d;
  }
  model.p = p;
  model.mutation.kind = MutationFamily::Kind::gaussian_step;
  model.mutation.sigma = 1.0;
  model.bounds = {beta, beta, gamma_b, gamma_d};
  return model;
}

RateModel swap_model(double p) {
  RateModel model;
  model.traits.kind = TraitSpace::Kind::finite;
  model.traits.size = 2;
  model.beta.kind = BetaFn::Kind::constant;
  model.beta.value = 1.0;
  model.gamma_death.kind = GammaFn::Kind::table;
  model.gamma_death.values = {0.2, 0.4};
  model.p = p;
  model.mutation.kind = MutationFamily::Kind::rare_jump;
  model.mutation.theta = 1.0;
  model.mutation.matrix = {{0.0, 1.0}, {1.0, 0.0}};
  model.bounds = {1.0, 1.0, 0.0, 0.4};
  return model;
}

// Event-by-event rebuild of the scale-N generator: enumerate every death,
// clone and mutant move, evaluate F on the moved state, weight by its rate.
// Independent of the fused/materialized engines; quadrature only through the
// shared Gauss-Hermite rule.
double brute_omega(const FinitePhylogeny& chi, const TestFunction& F, const RateModel& model, int N) {
  if (chi.empty()) return 0.0;
  const double zeta = chi.zeta();
  const double m = chi.total_mass();
  const auto w = chi.sampling_weights();
  const double F0 = evaluate(F, chi).value;
  const std::size_t C = chi.clan_count();

  double acc = 0.0;
  for (std::size_t x = 0; x < C; ++x) {
    const double n_x = static_cast<double>(chi.count(x));
    double death = model.beta(chi.trait(x)) / zeta;
    double birth = model.beta(chi.trait(x)) / zeta;
    for (std::size_t y = 0; y < C; ++y) {
      death += w[y] * model.gamma_death(m, chi.phys_dist(y, x), chi.trait(y), chi.trait(x));
      birth += w[y] * model.gamma_birth(m, chi.phys_dist(y, x), chi.trait(y), chi.trait(x));
    }

    {
      FinitePhylogeny minus = chi;
      minus.remove_particle(x);
      acc += n_x * death * (evaluate(F, minus).value - F0);
    }

    const double clone_w = (1.0 - model.p) + model.p * model.mutation.stay_probability(N);
    {
      FinitePhylogeny plus = chi;
      plus.add_particle(x);
      acc += n_x * birth * clone_w * (evaluate(F, plus).value - F0);
    }

    if (model.p > 0) {
      if (model.mutation.kind == MutationFamily::Kind::rare_jump) {
        const auto& row = model.mutation.matrix[static_cast<std::size_t>(chi.trait(x).index())];
        for (std::size_t j = 0; j < row.size(); ++j) {
          if (row[j] == 0.0) continue;
          FinitePhylogeny mut = chi;
          mut.insert_mutant(x, Trait::finite(static_cast<int>(j)));
          const double jump_w = model.p * (model.mutation.theta / N) * row[j];
          acc += n_x * birth * jump_w * (evaluate(F, mut).value - F0);
        }
      } else {
        const double sd = model.mutation.sigma / std::sqrt(static_cast<double>(N));
        const auto& rule = GaussHermiteRule::of_order(32);
        const double moved = rule.integrate_normal(chi.trait(x).value(), sd, [&](double kap) {
          FinitePhylogeny mut = chi;
          mut.insert_mutant(x, Trait::real(kap));
          return evaluate(F, mut).value;
        });
        acc += n_x * birth * model.p * (moved - F0);
      }
    }
  }
  return acc;
}

}  // namespace

TEST_CASE("state averages reduce to weighted sums") {
  const ClanGeometry& pair = standard_geometries()[1];  // pair_even
  RateModel model = swap_model(0.5);
  const FinitePhylogeny chi = embed_at_scale(pair, 8, model.traits);
  const auto w = chi.sampling_weights();
  CHECK(hat_beta(chi, model) == doctest::Approx(1.0));

  double expect = 0.0;
  const double m = chi.total_mass();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      expect += w[i] * w[j] * model.gamma_death(m, chi.phys_dist(i, j), chi.trait(i), chi.trait(j));
  const StateAverages avg = state_averages(chi, model);
  CHECK(avg.gamma_death_hat == doctest::Approx(expect).epsilon(1e-12));
  CHECK(avg.gamma_birth_hat == 0.0);
  CHECK(avg.net_growth() == doctest::Approx(-expect).epsilon(1e-12));
}

TEST_CASE("limit generator on pure mass functions has the closed form") {
  const RateModel model = constant_model(1.2, 0.5, 0.3, 0.0);
  const FinitePhylogeny chi = embed_at_scale(standard_geometries()[1], 16, model.traits);
  const double m = chi.total_mass();

  TestFunction F;
  F.degree = 0;
  F.g = MassFactor::power_exp(2, 0.4);

  const OmegaParts parts = omega_limit(chi, F, model);
  CHECK(parts.competition == doctest::Approx(m * (0.5 - 0.3) * F.g.d1(m)).epsilon(1e-12));
  CHECK(parts.fluctuation == doctest::Approx(1.2 * m * F.g.d2(m)).epsilon(1e-12));
  CHECK(parts.mass_flow == doctest::Approx(0.0));
  CHECK(parts.trait_mutation == 0.0);
  CHECK(parts.growth == 0.0);
  CHECK(parts.resample == doctest::Approx(0.0));
  CHECK(parts.total() == doctest::Approx(m * (0.5 - 0.3) * F.g.d1(m) + 1.2 * m * F.g.d2(m)).epsilon(1e-10));
}

TEST_CASE("discrete generator matches the event-by-event rebuild") {
  const int N = 8;
  TestFunction F;
  F.degree = 2;
  F.g = MassFactor::power_exp(2, 1.0);
  F.phi.lambdas = {0.8};

  SUBCASE("finite traits with rare jumps") {
    const RateModel model = swap_model(0.7);
    F.f = {TraitFactor::table({0.9, 0.4}), TraitFactor::table({0.3, 1.0})};
    for (const char* name : {"pair_even", "triangle"}) {
      for (const auto& geom : standard_geometries()) {
        if (geom.name != name) continue;
        const FinitePhylogeny chi = embed_at_scale(geom, N, model.traits);
        const double oracle = brute_omega(chi, F, model, N);
        for (DiscreteEngine engine : {DiscreteEngine::fused, DiscreteEngine::materialized}) {
          DiscreteOmegaOptions opt;
          opt.engine = engine;
          const DiscreteOmega got = omega_discrete(chi, F, model, N, opt);
          INFO(geom.name, " engine ", static_cast<int>(engine));
          CHECK(got.value == doctest::Approx(oracle).epsilon(1e-10));
          CHECK(got.fused == (engine == DiscreteEngine::fused));
        }
      }
    }
  }

  SUBCASE("real traits with gaussian steps") {
    const RateModel model = constant_model(1.0, 0.0, 0.25, 0.4);
    F.f = {TraitFactor::cauchy_bump(0.2), TraitFactor::cosine(0.9, 0.1)};
    const FinitePhylogeny chi = embed_at_scale(standard_geometries()[5], N, model.traits);  // line3
    const double oracle = brute_omega(chi, F, model, N);
    const DiscreteOmega got = omega_discrete(chi, F, model, N);
    CHECK(got.value == doctest::Approx(oracle).epsilon(1e-9));
  }
}

TEST_CASE("fused and materialized engines agree") {
  const RateModel model = constant_model(1.0, 0.3, 0.2, 0.5);
  TestFunction F;
  F.degree = 2;
  F.g = MassFactor::power_exp(2, 0.7);
  F.phi.lambdas = {0.5};
  F.f = {TraitFactor::cauchy_bump(0.0), TraitFactor::cosine(1.1, 0.0)};

  for (int gi : {1, 5, 7}) {
    const FinitePhylogeny chi = embed_at_scale(standard_geometries()[static_cast<std::size_t>(gi)], 16, model.traits);
    DiscreteOmegaOptions fused, mat;
    fused.engine = DiscreteEngine::fused;
    mat.engine = DiscreteEngine::materialized;
    const double a = omega_discrete(chi, F, model, 16, fused).value;
    const double b = omega_discrete(chi, F, model, 16, mat).value;
    CHECK(a == doctest::Approx(b).epsilon(1e-10));
  }
}

TEST_CASE("quadrature error estimate stays tiny at order 32") {
  const RateModel model = constant_model(1.0, 0.0, 0.0, 0.6);
  TestFunction F;
  F.degree = 1;
  F.g = MassFactor::power_exp(2, 1.0);
  F.f = {TraitFactor::cosine(1.3, 0.2)};
  const FinitePhylogeny chi = embed_at_scale(standard_geometries()[2], 16, model.traits);
  DiscreteOmegaOptions opt;
  opt.estimate_quadrature_error = true;
  const DiscreteOmega got = omega_discrete(chi, F, model, 16, opt);
  CHECK(got.quadrature_error < 1e-8);
}

TEST_CASE("both generators vanish on the empty state") {
  const RateModel model = constant_model(1.0, 0.2, 0.1, 0.3);
  const FinitePhylogeny chi(1.0 / 16, 1.0 / 16);
  TestFunction F;
  F.degree = 1;
  F.g = MassFactor::power_exp(2, 1.0);
  F.f = {TraitFactor::cauchy_bump(0.0)};
  CHECK(omega_limit(chi, F, model).total() == 0.0);
  CHECK(omega_discrete(chi, F, model, 16).value == 0.0);
}

TEST_CASE("scale mismatch and unsupported inputs are rejected") {
  const RateModel model = constant_model(1.0, 0.0, 0.0, 0.5);
  TestFunction F;
  F.degree = 0;
  F.g = MassFactor::power_exp(2, 1.0);

  const FinitePhylogeny chi8 = embed_at_scale(standard_geometries()[1], 8, model.traits);
  CHECK_THROWS_AS(omega_discrete(chi8, F, model, 16), Error);

  const FinitePhylogeny chi16 = embed_at_scale(standard_geometries()[1], 16, model.traits);
  TestFunction capped;
  capped.degree = 0;
  capped.g = MassFactor::capped_power(2, 4.0);
  CHECK_THROWS_AS(omega_limit(chi16, capped, model), Error);
  // the discrete generator needs no derivatives, so capped powers pass there
  CHECK_NOTHROW(omega_discrete(chi16, capped, model, 16));

  RateModel fixed = model;
  fixed.mutation.kind = MutationFamily::Kind::fixed_gaussian;
  CHECK_THROWS_AS(omega_limit(chi16, F, fixed), Error);
}

TEST_CASE("geometries embed scale-free") {
  const TraitSpace space{TraitSpace::Kind::real, 0};
  for (const auto& geom : standard_geometries()) {
    const FinitePhylogeny base = embed_at_scale(geom, 8, space);
    for (int N : {16, 64, 128}) {
      const FinitePhylogeny chi = embed_at_scale(geom, N, space);
      CHECK(chi.total_mass() == doctest::Approx(base.total_mass()).epsilon(1e-12));
      CHECK(chi.clan_count() == geom.size());
      for (std::size_t i = 0; i < geom.size(); ++i)
        for (std::size_t j = 0; j < geom.size(); ++j)
          CHECK(chi.phys_dist(i, j) == doctest::Approx(geom.dist[i * geom.size() + j]).epsilon(1e-12));
      chi.validate();
    }
  }
}

TEST_CASE("the standard battery of geometries is well formed") {
  const auto& geoms = standard_geometries();
  CHECK(geoms.size() == 10);
  std::set<std::string> names;
  for (const auto& g : geoms) {
    names.insert(g.name);
    const std::size_t C = g.size();
    CHECK(C >= 1);
    CHECK(g.dist.size() == C * C);
    CHECK(g.real_trait.size() == C);
    CHECK(g.finite_trait.size() == C);
    double total = 0.0;
    for (double f : g.mass_fraction) total += f;
    CHECK(total == doctest::Approx(1.0));
  }
  CHECK(names.size() == 10);
}

TEST_CASE("log-log slope fits recover power laws") {
  std::vector<double> x = {8, 16, 32, 64, 128};
  std::vector<double> y1(x.size()), yh(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    y1[i] = 3.0 / x[i];
    yh[i] = 0.7 / std::sqrt(x[i]);
  }
  CHECK(fit_loglog_slope(x, y1) == doctest::Approx(-1.0).epsilon(1e-10));
  CHECK(fit_loglog_slope(x, yh) == doctest::Approx(-0.5).epsilon(1e-10));
}

TEST_CASE("convergence gaps shrink with the scale") {
  const RateModel model = constant_model(1.0, 0.0, 0.2, 0.3);
  TestFunction F;
  F.degree = 1;
  F.g = MassFactor::power_exp(2, 1.0);
  F.f = {TraitFactor::cauchy_bump(0.0)};
  F.name = "one_trait";

  const std::vector<ClanGeometry> geoms = {standard_geometries()[1]};
  const std::vector<TestFunction> fns = {F};
  const std::vector<int> scales = {8, 16, 32, 64};
  const GapReport report = convergence_gap(model, geoms, fns, scales);

  REQUIRE(report.entries.size() == scales.size());
  REQUIRE(report.slopes.size() == 1);
  for (const auto& e : report.entries) CHECK(e.gap == doctest::Approx(std::abs(e.discrete - e.limit)));
  CHECK(report.slopes[0].gap_last < report.slopes[0].gap_first);
  CHECK(report.slopes[0].slope < -0.5);
  CHECK(report.max_quadrature_error < 1e-8);
  CHECK(report.to_csv().rfind("state,function,N,", 0) == 0);
}
