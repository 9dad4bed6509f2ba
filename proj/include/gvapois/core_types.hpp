#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gvapois/error.hpp"
#include "gvapois/matrix.hpp"
#include "gvapois/predictors.hpp"

namespace gvapois {

// Fixed effects and random-intercept variance of the Poisson mixed model.
struct ModelParams {
  double beta0 = 0.0;
  double beta1 = 0.0;
  double sigma2 = 1.0;

  bool operator==(const ModelParams&) const = default;
};

inline void validate_params(const ModelParams& p) {
  if (!std::isfinite(p.beta0) || !std::isfinite(p.beta1) || !std::isfinite(p.sigma2)) {
    throw Error(ErrorCode::NonFiniteValue, "model parameters must be finite");
  }
  if (!(p.sigma2 > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma2 must be > 0");
}

// Per-group Gaussian variational posterior N(mu[i], lambda[i]).
struct VariationalParams {
  std::vector<double> mu;
  std::vector<double> lambda;

  std::size_t size() const noexcept { return mu.size(); }
  bool operator==(const VariationalParams&) const = default;
};

// Balanced m x n panel. Row i holds group i.
struct Dataset {
  RowMatrix<double> x;
  RowMatrix<std::int64_t> y;
  std::optional<std::vector<double>> u_latent;  // simulation only; never read by estimators

  std::size_t m() const noexcept { return y.rows(); }
  std::size_t n() const noexcept { return y.cols(); }

  // Y_i. = sum_j Y_ij
  std::int64_t y_total(std::size_t i) const {
    std::int64_t s = 0;
    for (auto v : y.row(i)) s += v;
    return s;
  }

  // B_i = sum_j exp(beta0 + beta1 X_ij)
  double b_total(std::size_t i, double beta0, double beta1) const {
    double s = 0.0;
    for (double xv : x.row(i)) s += std::exp(beta0 + beta1 * xv);
    return s;
  }

  bool operator==(const Dataset&) const = default;
};

inline void validate_dataset(const Dataset& d) {
  if (d.x.rows() != d.y.rows() || d.x.cols() != d.y.cols()) {
    throw Error(ErrorCode::ShapeMismatch,
                "x is " + std::to_string(d.x.rows()) + "x" + std::to_string(d.x.cols()) + " but y is " +
                    std::to_string(d.y.rows()) + "x" + std::to_string(d.y.cols()));
  }
  if (d.m() < 1 || d.n() < 1) {
    throw Error(ErrorCode::ShapeMismatch, "dataset needs m >= 1 and n >= 1");
  }
  for (std::size_t i = 0; i < d.m(); ++i) {
    for (std::size_t j = 0; j < d.n(); ++j) {
      if (d.y(i, j) < 0) {
        throw Error(ErrorCode::NegativeCount,
                    "y(" + std::to_string(i) + "," + std::to_string(j) + ") = " + std::to_string(d.y(i, j)));
      }
      if (!std::isfinite(d.x(i, j))) {
        throw Error(ErrorCode::NonFiniteValue,
                    "x(" + std::to_string(i) + "," + std::to_string(j) + ") is not finite");
      }
    }
  }
  if (d.u_latent && d.u_latent->size() != d.m()) {
    throw Error(ErrorCode::ShapeMismatch, "u_latent length differs from m");
  }
}

struct GvaFit {
  ModelParams params;
  VariationalParams variational;
  double lower_bound = 0.0;
  int iterations = 0;
  bool converged = false;
  double residual_sup_norm = 0.0;

  bool operator==(const GvaFit&) const = default;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;

  double length() const noexcept { return upper - lower; }
  double center() const noexcept { return 0.5 * (lower + upper); }
  bool contains(double v) const noexcept { return lower <= v && v <= upper; }
  bool operator==(const Interval&) const = default;
};

inline Interval symmetric_interval(double estimate, double half_width) {
  return {estimate - half_width, estimate + half_width};
}

enum class Parameter { Beta0, Beta1, Sigma2 };

inline std::string_view parameter_name(Parameter p) noexcept {
  switch (p) {
    case Parameter::Beta0: return "beta0";
    case Parameter::Beta1: return "beta1";
    case Parameter::Sigma2: return "sigma2";
  }
  return "?";
}

inline Parameter parse_parameter(std::string_view name) {
  if (name == "beta0") return Parameter::Beta0;
  if (name == "beta1") return Parameter::Beta1;
  if (name == "sigma2") return Parameter::Sigma2;
  throw Error(ErrorCode::InvalidArgument, "unknown parameter '" + std::string(name) + "'");
}

inline constexpr Parameter kAllParameters[] = {Parameter::Beta0, Parameter::Beta1, Parameter::Sigma2};

inline double parameter_value(const ModelParams& p, Parameter which) noexcept {
  switch (which) {
    case Parameter::Beta0: return p.beta0;
    case Parameter::Beta1: return p.beta1;
    case Parameter::Sigma2: return p.sigma2;
  }
  return 0.0;
}

struct CiSet {
  double alpha = 0.05;
  Interval beta0_interval;
  Interval beta1_interval;
  Interval sigma2_interval;
  std::optional<double> tau2_hat;  // absent for likelihood-based intervals

  const Interval& interval(Parameter which) const noexcept {
    switch (which) {
      case Parameter::Beta0: return beta0_interval;
      case Parameter::Beta1: return beta1_interval;
      default: return sigma2_interval;
    }
  }
  bool operator==(const CiSet&) const = default;
};

struct ParameterCoverage {
  std::int64_t cover_count = 0;
  double coverage_pct = 0.0;
  double mean_length = 0.0;

  bool operator==(const ParameterCoverage&) const = default;
};

// One (m, n) cell of a coverage study.
struct CoverageReport {
  ModelParams truth;
  PredictorDistribution dist = PredictorDistribution::StandardNormal;
  std::size_t m = 0;
  std::size_t n = 0;
  double alpha = 0.05;
  std::int64_t replications = 0;
  std::uint64_t seed = 0;
  ParameterCoverage beta0;
  ParameterCoverage beta1;
  ParameterCoverage sigma2;
  std::int64_t failures = 0;

  const ParameterCoverage& coverage(Parameter which) const noexcept {
    switch (which) {
      case Parameter::Beta0: return beta0;
      case Parameter::Beta1: return beta1;
      default: return sigma2;
    }
  }
  ParameterCoverage& coverage(Parameter which) noexcept {
    switch (which) {
      case Parameter::Beta0: return beta0;
      case Parameter::Beta1: return beta1;
      default: return sigma2;
    }
  }
  bool operator==(const CoverageReport&) const = default;
};

}  // namespace gvapois
