#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <vector>

#include "phylosim/errors.hpp"
#include "phylosim/experiments.hpp"
#include "phylosim/generators.hpp"

using namespace phylosim;

TEST_CASE("summaries and quantiles match hand values") {
  const std::vector<double> xs = {1.0, 2.0, 3.0, 4.0};
  const Summary s = summarize(xs);
  CHECK(s.mean == doctest::Approx(2.5));
  CHECK(s.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
  CHECK(s.se == doctest::Approx(s.sd / 2.0));
  CHECK(s.count == 4);

  CHECK(quantile({5.0, 1.0, 3.0}, 0.0) == 1.0);
  CHECK(quantile({5.0, 1.0, 3.0}, 0.5) == 3.0);
  CHECK(quantile({5.0, 1.0, 3.0}, 1.0) == 5.0);
  CHECK(quantile({1.0, 2.0}, 0.75) == doctest::Approx(1.75));
}

TEST_CASE("replicate fan-out is deterministic in the worker count") {
  const auto job = [](std::size_t k) {
    RandomStream rng(500, k);
    return std::vector<double>{rng.uniform(), rng.uniform()};
  };
  setenv("PHYLOSIM_THREADS", "1", 1);
  const auto serial = run_replicates(64, job);
  setenv("PHYLOSIM_THREADS", "3", 1);
  const auto threaded = run_replicates(64, job);
  unsetenv("PHYLOSIM_THREADS");
  REQUIRE(serial.size() == threaded.size());
  for (std::size_t k = 0; k < serial.size(); ++k) CHECK(serial[k] == threaded[k]);
}

TEST_CASE("random states validate in both trait spaces") {
  RandomStream rng(9, 9);
  const TraitSpace real_space{TraitSpace::Kind::real, 0};
  const TraitSpace finite_space{TraitSpace::Kind::finite, 3};
  for (int trial = 0; trial < 10; ++trial) {
    const FinitePhylogeny a = random_state(real_space, 16, 5, 20, rng);
    a.validate(&real_space);
    CHECK(a.clan_count() == 5);
    CHECK(a.particle_count() >= 5 + 20);
    const FinitePhylogeny b = random_state(finite_space, 8, 4, 0, rng);
    b.validate(&finite_space);
    CHECK(b.clan_count() == 4);
  }
}

TEST_CASE("the standard battery is certified and space-compatible") {
  for (const TraitSpace space : {TraitSpace{TraitSpace::Kind::real, 0}, TraitSpace{TraitSpace::Kind::finite, 2}}) {
    const auto fns = standard_battery(space);
    REQUIRE(fns.size() == 4);
    for (std::size_t i = 0; i < fns.size(); ++i) {
      CHECK(fns[i].degree == i);
      fns[i].check_shape();
      fns[i].check_traits(space);
      CHECK(certify_tilde(fns[i], 0.5).ok);
      CHECK_FALSE(fns[i].name.empty());
    }
  }
}

TEST_CASE("a constant function has zero residual pathwise") {
  // degree 0 with unit mass factor: F == 1, so the discrete generator
  // telescopes to zero along every trajectory
  RateModel model = preset("neutral");
  TestFunction flat;
  flat.degree = 0;
  flat.g = MassFactor::one();
  flat.name = "unit";

  const FinitePhylogeny chi0 =
      FinitePhylogeny::single_clan(1.0 / 8, 1.0 / 8, 8, Trait::real(0.0));
  const ResidualReport report =
      martingale_residual(chi0, model, {flat}, ResidualMode::discrete, {0.2, 0.4}, 50, 321);
  REQUIRE(report.series.size() == 1);
  for (const auto& pt : report.series[0].points) {
    CHECK(std::abs(pt.residual) < 1e-12);
    CHECK(pt.ratio == 0.0);
  }
}

TEST_CASE("residual gate rejects uncertified functions") {
  RateModel model = preset("logistic");  // gamma_d_bar > 0
  TestFunction bare;
  bare.degree = 0;
  bare.g = MassFactor::one();  // constant g with competition: not in the domain
  const FinitePhylogeny chi0 =
      FinitePhylogeny::single_clan(1.0 / 8, 1.0 / 8, 8, Trait::finite(0));
  CHECK_THROWS_AS(
      martingale_residual(chi0, model, {bare}, ResidualMode::discrete, {0.1}, 10, 1), Error);
}

TEST_CASE("critical branching keeps the first moment flat") {
  RateModel model = preset("neutral");  // beta = 1, no competition
  model.p = 0.0;
  const MomentReport report = moment_bound_check(model, 1.0, 16, 0.5, {1, 2}, 2000, 777);
  REQUIRE(report.checks.size() == 2);
  CHECK(report.all_ok);
  const MomentCheck& q1 = report.checks[0];
  CHECK(q1.q == 1);
  // martingale: E[m_t] = m_0
  CHECK(std::abs(q1.end_moment.mean - 1.0) < 4 * q1.end_moment.se);
  CHECK(q1.sup_moment.mean >= q1.end_moment.mean - 1e-12);
  CHECK(q1.bound == doctest::Approx((1.0 + 1.0) * std::exp(1.0 * 2.0 * 0.5)));

  const MomentCheck& q2 = report.checks[1];
  CHECK(q2.bound == doctest::Approx(2.0 * std::exp(3.0 * 2.0 * 0.5)));
  CHECK(q2.end_moment.mean + 3.5 * q2.end_moment.se <= q2.bound);
}

TEST_CASE("escape probes need a dead competition channel") {
  RateModel model = preset("neutral");
  const MomentReport with = moment_bound_check(model, 1.0, 8, 0.3, {1}, 200, 5, 2.0, {0.5, 1.0});
  REQUIRE(with.escapes.size() == 2);
  CHECK(with.escapes[0].probability <= with.escapes[1].probability + 0.15);
  for (const auto& probe : with.escapes) {
    CHECK(probe.probability >= 0.0);
    CHECK(probe.probability <= 1.0);
  }

  RateModel competing = preset("logistic");
  CHECK_THROWS_AS(moment_bound_check(competing, 1.0, 8, 0.3, {1}, 10, 5, 2.0, {1.0}), Error);
}

TEST_CASE("trajectory statistics cover the requested grid") {
  const RateModel model = preset("neutral");
  SeriesSpec spec;
  spec.grid = {0.1, 0.2, 0.3};
  spec.reps = 40;
  spec.seed = 11;
  spec.sim_config.scale_N = 8;
  const FinitePhylogeny chi0 = embed_at_scale(standard_geometries()[1], 8, model.traits);
  const StatSeries series = trajectory_statistics(chi0, model, spec);
  CHECK(series.times == spec.grid);
  REQUIRE(series.rows.size() == 3);
  REQUIRE(series.names.size() == series.rows[0].size());

  // the radius grid is descending, so covering counts ascend along it
  std::vector<std::size_t> cover_idx;
  for (std::size_t i = 0; i < series.names.size(); ++i)
    if (series.names[i].rfind("cover_", 0) == 0) cover_idx.push_back(i);
  REQUIRE(cover_idx.size() == spec.eps_grid.size());
  for (const auto& row : series.rows)
    for (std::size_t i = 0; i + 1 < cover_idx.size(); ++i)
      CHECK(row[cover_idx[i]].mean <= row[cover_idx[i + 1]].mean + 1e-9);

  // mass stays near critical
  const std::size_t mass_idx = 0;
  CHECK(series.names[mass_idx] == "mass");
  for (const auto& row : series.rows) CHECK(std::abs(row[mass_idx].mean - 1.0) < 0.5);

  const std::string csv = series.to_csv();
  CHECK(csv.rfind("time,statistic,mean,se\n", 0) == 0);
}

TEST_CASE("clone-only dynamics label as a single dominant strain") {
  RateModel model = preset("neutral");
  model.p = 0.0;
  SeriesSpec spec;
  spec.grid = {0.2, 0.4};
  spec.reps = 60;
  spec.seed = 21;
  spec.sim_config.scale_N = 8;
  const FinitePhylogeny chi0 =
      FinitePhylogeny::single_clan(1.0 / 8, 1.0 / 8, 8, Trait::real(0.0));
  const PatternReport report = phylo_patterns(chi0, model, spec);
  // every surviving run is one clan holding all mass, so the ensemble mean
  // share is the survival fraction
  if (report.extinct_fraction <= 0.5) {
    CHECK(report.label == "a");
    CHECK(report.dominant_share == doctest::Approx(1.0 - report.extinct_fraction).epsilon(0.02));
  } else {
    CHECK(report.label == "extinct");
  }
}

TEST_CASE("containment constants are finite and ordered in k") {
  const RateModel model = preset("neutral");
  const FinitePhylogeny chi0 =
      FinitePhylogeny::single_clan(1.0 / 8, 1.0 / 8, 8, Trait::real(0.0));
  const ContainmentReport report =
      compact_containment_probe(chi0, model, 8, 0.3, {0.1, 0.2, 0.3}, 2, 0.1, 120, 99);
  CHECK(report.N == 8);
  REQUIRE(report.constants.size() == 3);
  for (const auto& c : report.constants) {
    CHECK(c.eps == doctest::Approx(std::pow(2.0, -c.k)));
    CHECK(c.mass_cap > 0.0);
    CHECK(std::isfinite(c.trait_radius));
    CHECK(c.core_diameter >= 0.0);
    CHECK(c.core_covering >= 0.0);
    CHECK(c.containment_probability >= 0.5);
    CHECK(c.target_probability == doctest::Approx(1.0 - 0.1 * c.eps));
  }
  // the mass cap is shared across k
  CHECK(report.constants[0].mass_cap == doctest::Approx(report.constants[2].mass_cap));
}

TEST_CASE("horizon ensembles report the advertised statistics") {
  const RateModel model = preset("neutral");
  const FinitePhylogeny chi0 = embed_at_scale(standard_geometries()[1], 8, model.traits);
  const EnsembleStats stats = ensemble_at_horizon(chi0, model, 0.3, Engine::reference, 0.25, 0.05, 80, 3);
  REQUIRE(stats.names.size() == 5);
  CHECK(stats.names[0] == "mass");
  CHECK(stats.stats.size() == stats.names.size());
  CHECK(stats.extinct_fraction >= 0.0);
  CHECK(stats.extinct_fraction <= 1.0);
  CHECK(std::abs(stats.stats[0].mean - 1.0) < 0.6);
}

TEST_CASE("domination ensembles count failures instead of throwing") {
  RateModel m1;
  m1.traits.kind = TraitSpace::Kind::real;
  m1.beta.value = 1.0;
  m1.gamma_death.kind = GammaFn::Kind::constant;
  m1.gamma_death.value = 0.4;
  m1.p = 0.0;
  m1.bounds = {1.0, 1.0, 0.0, 0.4};
  RateModel m2 = m1;
  m2.gamma_death.kind = GammaFn::Kind::zero;
  m2.gamma_birth.kind = GammaFn::Kind::constant;
  m2.gamma_birth.value = 0.2;
  m2.bounds = {1.0, 1.0, 0.2, 0.0};

  const FinitePhylogeny chi0 =
      FinitePhylogeny::single_clan(1.0 / 8, 1.0 / 8, 8, Trait::real(0.0));
  const DominationEnsemble ens = domination_ensemble(chi0, m1, m2, 0.3, 50, 10);
  CHECK(ens.runs == 50);
  CHECK(ens.subset_failures == 0);
  CHECK(ens.precondition_failures == 0);
  CHECK(ens.mean_mass1 <= ens.mean_mass2 + 1e-12);

  // flipped order fails preconditions on every run, without an exception
  const DominationEnsemble flipped = domination_ensemble(chi0, m2, m1, 0.3, 5, 10);
  CHECK(flipped.precondition_failures == 5);
  CHECK_FALSE(flipped.first_failure_messages.empty());
}
