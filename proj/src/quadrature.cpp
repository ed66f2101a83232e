#include "phylosim/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "phylosim/errors.hpp"

namespace phylosim {

namespace {

constexpr double kSqrtPi = 1.7724538509055160272981674833411;

GaussHermiteRule build(int n) {
  GaussHermiteRule rule;
  rule.nodes.assign(n, 0.0);
  rule.weights.assign(n, 0.0);
  const int half = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < half; ++i) {
    // standard initial guesses, then Newton on the orthonormal Hermite recurrence
    if (i == 0) {
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
    } else if (i == 1) {
      z -= 1.14 * std::pow(n, 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * rule.nodes[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * rule.nodes[1];
    } else {
      z = 2.0 * z - rule.nodes[i - 2];
    }
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = 1.0 / std::sqrt(kSqrtPi);
      double p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / j) * p2 - std::sqrt((j - 1.0) / j) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    rule.nodes[i] = z;
    rule.nodes[n - 1 - i] = -z;
    rule.weights[i] = 2.0 / (pp * pp);
    rule.weights[n - 1 - i] = rule.weights[i];
  }
  return rule;
}

}  // namespace

const GaussHermiteRule& GaussHermiteRule::of_order(int n) {
  require(n >= 1 && n <= 128, ErrorCode::precondition_violated, "gauss-hermite: order out of range");
  static std::map<int, GaussHermiteRule> cache;
  static std::mutex mutex;
  std::lock_guard<std::mutex> lock{mutex};
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, build(n)).first;
  return it->second;
}

double GaussHermiteRule::integrate_normal(double mean, double sd, const std::function<double(double)>& f) const {
  const double scale = 1.4142135623730950488016887242097 * sd;  // sqrt(2) sd
  double acc = 0.0;
  for (std::size_t i = 0; i < nodes.size(); ++i) acc += weights[i] * f(mean + scale * nodes[i]);
  return acc / kSqrtPi;
}

}  // namespace phylosim
