#include <doctest.h>

#include <cmath>

#include "phylosim/quadrature.hpp"

using namespace phylosim;

TEST_CASE("gauss-hermite integrates normal moments exactly") {
  const auto& rule = GaussHermiteRule::of_order(8);
  const double sd = 0.7;
  // E[Z^k] for Z ~ N(0, sd): 0, sd^2, 0, 3 sd^4, 0, 15 sd^6
  for (int k = 0; k <= 6; ++k) {
    const double got = rule.integrate_normal(0.0, sd, [&](double x) { return std::pow(x, k); });
    double want = 0.0;
    if (k == 0) want = 1.0;
    if (k == 2) want = sd * sd;
    if (k == 4) want = 3.0 * std::pow(sd, 4);
    if (k == 6) want = 15.0 * std::pow(sd, 6);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("gauss-hermite handles nonzero means") {
  const auto& rule = GaussHermiteRule::of_order(12);
  const double mean = 1.3, sd = 0.4;
  const double got = rule.integrate_normal(mean, sd, [](double x) { return x * x; });
  CHECK(got == doctest::Approx(mean * mean + sd * sd).epsilon(1e-12));
}

TEST_CASE("gauss-hermite reaches near machine accuracy on smooth integrands") {
  const auto& rule = GaussHermiteRule::of_order(32);
  const double omega = 1.1, sd = 0.5;
  const double got = rule.integrate_normal(0.0, sd, [&](double x) { return std::cos(omega * x); });
  const double want = std::exp(-omega * omega * sd * sd / 2.0);
  CHECK(std::abs(got - want) < 1e-13);
}

TEST_CASE("rule orders are cached and weights sum to one") {
  const auto& a = GaussHermiteRule::of_order(16);
  const auto& b = GaussHermiteRule::of_order(16);
  CHECK(&a == &b);
  const double total = a.integrate_normal(0.0, 1.0, [](double) { return 1.0; });
  CHECK(total == doctest::Approx(1.0).epsilon(1e-13));
}
