#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "gvapois/error.hpp"

namespace gvapois {

// Gauss-Hermite rule for integrals of the form int f(t) exp(-t^2) dt.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> log_weights;
};

// Roots of the degree-n Hermite polynomial by Newton iteration on the
// orthonormal three-term recurrence, with the classical asymptotic initial
// guesses for successive roots.
inline GaussHermiteRule gauss_hermite_rule(std::size_t n) {
  if (n < 1) throw Error(ErrorCode::InvalidArgument, "Gauss-Hermite rule needs at least one node");
  const double pim4 = std::pow(std::numbers::pi, -0.25);
  const std::size_t half = (n + 1) / 2;
  const double nd = static_cast<double>(n);
  std::vector<double> x(n), w(n);
  double z = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    if (i == 0) {
      z = std::sqrt(2.0 * nd + 1.0) - 1.85575 * std::pow(2.0 * nd + 1.0, -1.0 / 6.0);
    } else if (i == 1) {
      z -= 1.14 * std::pow(nd, 0.426) / z;
    } else if (i == 2) {
      z = 1.86 * z - 0.86 * x[0];
    } else if (i == 3) {
      z = 1.91 * z - 0.91 * x[1];
    } else {
      z = 2.0 * z - x[i - 2];
    }
    double pp = 0.0;
    bool ok = false;
    for (int it = 0; it < 100; ++it) {
      double p1 = pim4, p2 = 0.0;
      for (std::size_t j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        const double jd = static_cast<double>(j);
        p1 = z * std::sqrt(2.0 / jd) * p2 - std::sqrt((jd - 1.0) / jd) * p3;
      }
      pp = std::sqrt(2.0 * nd) * p2;
      const double z_prev = z;
      z = z_prev - p1 / pp;
      if (std::fabs(z - z_prev) <= 1e-15 * std::max(1.0, std::fabs(z))) {
        ok = true;
        break;
      }
    }
    if (!ok) throw Error(ErrorCode::InvalidArgument, "Gauss-Hermite root iteration failed");
    x[i] = z;
    x[n - 1 - i] = -z;
    w[i] = 2.0 / (pp * pp);
    w[n - 1 - i] = w[i];
  }
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  rule.log_weights.resize(n);
  // ascending order
  for (std::size_t k = 0; k < n; ++k) {
    rule.nodes[k] = x[n - 1 - k];
    rule.weights[k] = w[n - 1 - k];
    rule.log_weights[k] = std::log(rule.weights[k]);
  }
  return rule;
}

// log(sum exp(v)), tolerating -inf entries.
inline double log_sum_exp(std::span<const double> v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v) top = std::max(top, x);
  if (!std::isfinite(top)) return top;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - top);
  return top + std::log(acc);
}

}  // namespace gvapois
