#pragma once

// Test-only reference computations. Nothing here calls into the code paths
// it is used to check.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "gvapois/core_types.hpp"
#include "gvapois/simulate.hpp"

namespace oracle {

// Composite Simpson rule on [a, b] with `panels` (even) subintervals.
template <typename F>
double simpson(F&& f, double a, double b, int panels = 4000) {
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int k = 1; k < panels; ++k) s += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

// Normal quantile by bisection on erfc. Above 1/2 the search runs on the
// upper tail so 1 - p (exact there) keeps full relative precision.
inline double normal_quantile_bisect(double p) {
  const bool upper = p > 0.5;
  const double target = upper ? 1.0 - p : p;
  double lo = -40.0, hi = 0.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::numbers::sqrt2);
    (cdf < target ? lo : hi) = mid;
  }
  const double x = 0.5 * (lo + hi);
  return upper ? -x : x;
}

// log of int exp(Y u - B e^u - u^2 / (2 s2)) du by doubling the trapezoid
// grid on [mode - 12/sqrt(c), mode + 12/sqrt(c)]. The mode is located by
// plain bisection on the slope.
inline double trapezoid_log_integral(double y_total, double b, double s2) {
  auto g = [&](double u) { return y_total * u - b * std::exp(u) - 0.5 * u * u / s2; };
  auto slope = [&](double u) { return y_total - b * std::exp(u) - u / s2; };
  double lo = -60.0, hi = 60.0;
  while (slope(lo) <= 0.0) lo *= 2.0;
  while (slope(hi) >= 0.0) hi *= 2.0;
  for (int it = 0; it < 300; ++it) {
    const double mid = 0.5 * (lo + hi);
    (slope(mid) > 0.0 ? lo : hi) = mid;
  }
  const double mode = 0.5 * (lo + hi);
  const double curv = b * std::exp(mode) + 1.0 / s2;
  const double half = 12.0 / std::sqrt(curv);
  const double a = mode - half, z = mode + half;
  const double g0 = g(mode);
  auto f = [&](double u) { return std::exp(g(u) - g0); };

  int panels = 64;
  auto trap = [&](int k) {
    const double h = (z - a) / k;
    double s = 0.5 * (f(a) + f(z));
    for (int q = 1; q < k; ++q) s += f(a + q * h);
    return s * h;
  };
  double prev = trap(panels);
  for (int round = 0; round < 14; ++round) {
    panels *= 2;
    const double next = trap(panels);
    if (std::fabs(next - prev) <= 1e-15 * std::fabs(next)) {
      prev = next;
      break;
    }
    prev = next;
  }
  return g0 + std::log(prev);
}

// Exact marginal log-likelihood assembled from the trapezoid group integrals.
inline double trapezoid_loglik(const gvapois::ModelParams& p, const gvapois::Dataset& d) {
  double ll = -0.5 * static_cast<double>(d.m()) * std::log(2.0 * std::numbers::pi * p.sigma2);
  for (std::size_t i = 0; i < d.m(); ++i) {
    double yt = 0.0, b = 0.0;
    for (std::size_t j = 0; j < d.n(); ++j) {
      const double y = static_cast<double>(d.y(i, j));
      const double eta = p.beta0 + p.beta1 * d.x(i, j);
      ll += y * eta - std::lgamma(y + 1.0);
      yt += y;
      b += std::exp(eta);
    }
    ll += trapezoid_log_integral(yt, b, p.sigma2);
  }
  return ll;
}

// Parameters scattered around the five reference truth vectors.
inline gvapois::ModelParams near_reference_grid(std::mt19937_64& rng) {
  static constexpr gvapois::ModelParams grid[] = {
      {-0.3, 0.2, 0.5}, {2.2, -0.1, 0.16}, {1.2, 0.4, 0.1}, {0.02, 1.3, 1.0}, {-0.3, 0.2, 0.1}};
  std::uniform_int_distribution<int> pick(0, 4);
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  gvapois::ModelParams p = grid[pick(rng)];
  p.beta0 += jitter(rng);
  p.beta1 += jitter(rng);
  p.sigma2 *= std::exp(jitter(rng));
  return p;
}

struct Instance {
  gvapois::ModelParams truth;
  gvapois::Dataset data;
};

// Small simulated panel (m, n in [lo, hi]) with parameters near the grid.
inline Instance random_instance(std::mt19937_64& rng, std::size_t lo = 5, std::size_t hi = 20) {
  std::uniform_int_distribution<std::size_t> dim(lo, hi);
  Instance out;
  out.truth = near_reference_grid(rng);
  const auto dist = rng() % 2 ? gvapois::PredictorDistribution::StandardNormal
                              : gvapois::PredictorDistribution::UniformMinus1To1;
  const std::size_t m = dim(rng), n = dim(rng);
  out.data = gvapois::simulate_dataset(out.truth, dist, m, n, rng());
  return out;
}

}  // namespace oracle
