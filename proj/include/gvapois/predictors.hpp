#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

#include "gvapois/error.hpp"
#include "gvapois/matrix.hpp"
#include "gvapois/rng.hpp"

namespace gvapois {

// Predictor laws with a moment generating function finite on the whole line.
enum class PredictorDistribution { StandardNormal, UniformMinus1To1 };

inline std::string_view predictor_name(PredictorDistribution dist) noexcept {
  return dist == PredictorDistribution::StandardNormal ? "normal" : "uniform";
}

inline PredictorDistribution parse_predictor(std::string_view name) {
  if (name == "normal") return PredictorDistribution::StandardNormal;
  if (name == "uniform") return PredictorDistribution::UniformMinus1To1;
  throw Error(ErrorCode::InvalidArgument,
              "unknown predictor distribution '" + std::string(name) + "' (expected normal|uniform)");
}

namespace detail {

// sinh(t)/t and its first two derivatives from the series sum t^(2k)/(2k+1)!.
inline double sinhc_series(double t, int order) {
  double sum = 0.0;
  double fact = 1.0;  // (2k+1)!
  for (int k = 0; k <= 7; ++k) {
    if (k > 0) fact *= static_cast<double>((2 * k) * (2 * k + 1));
    const int p = 2 * k;
    double coef = 1.0;
    int power = p;
    for (int d = 0; d < order; ++d) {
      coef *= static_cast<double>(power);
      --power;
    }
    if (coef == 0.0) continue;
    sum += coef * std::pow(t, power) / fact;
  }
  return sum;
}

}  // namespace detail

// phi(t), phi'(t) or phi''(t) for the moment generating function of X.
inline double mgf(PredictorDistribution dist, double t, int order) {
  if (order < 0 || order > 2) {
    throw Error(ErrorCode::UnsupportedOrder, "mgf order must be 0, 1 or 2, got " + std::to_string(order));
  }
  if (!std::isfinite(t)) throw Error(ErrorCode::NonFiniteValue, "mgf argument is not finite");

  if (dist == PredictorDistribution::StandardNormal) {
    const double phi = std::exp(0.5 * t * t);
    switch (order) {
      case 0: return phi;
      case 1: return t * phi;
      default: return (1.0 + t * t) * phi;
    }
  }

  if (std::fabs(t) < 1e-2) return detail::sinhc_series(t, order);
  const double sh = std::sinh(t);
  const double ch = std::cosh(t);
  switch (order) {
    case 0: return sh / t;
    case 1: return (t * ch - sh) / (t * t);
    default: return ((t * t + 2.0) * sh - 2.0 * t * ch) / (t * t * t);
  }
}

inline double draw_predictor(PredictorDistribution dist, CellRng& rng) {
  return dist == PredictorDistribution::StandardNormal ? rng.normal() : 2.0 * rng.uniform() - 1.0;
}

// i.i.d. predictor panel; cell (i, j) is drawn from its own keyed stream.
inline RowMatrix<double> sample_x(PredictorDistribution dist, std::size_t m, std::size_t n,
                                  std::uint64_t seed) {
  if (m < 1 || n < 1) throw Error(ErrorCode::InvalidArgument, "sample_x requires m, n >= 1");
  RowMatrix<double> x(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      CellRng rng(seed, StreamTag::Predictor, i, j);
      x(i, j) = draw_predictor(dist, rng);
    }
  }
  return x;
}

}  // namespace gvapois
