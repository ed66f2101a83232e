#pragma once

#include <functional>
#include <vector>

namespace phylosim {

// Gauss-Hermite rule for integrals against exp(-x^2); nodes and weights are
// computed once per order by Newton iteration on the orthonormal recurrence.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  static const GaussHermiteRule& of_order(int n);

  // integral of f against the Normal(mean, sd^2) density
  double integrate_normal(double mean, double sd, const std::function<double(double)>& f) const;
};

}  // namespace phylosim
