#pragma once

#include <cmath>
#include <cstddef>

#include "gvapois/core_types.hpp"
#include "gvapois/error.hpp"
#include "gvapois/normal_quantile.hpp"
#include "gvapois/predictors.hpp"

namespace gvapois {

// Empirical phi(b1), phi'(b1), phi''(b1) from the observed predictors.
struct MgfMoments {
  double phi0_hat = 1.0;
  double phi1_hat = 0.0;
  double phi2_hat = 0.0;

  bool operator==(const MgfMoments&) const = default;
};

inline MgfMoments estimate_mgf_moments(const Dataset& d, double beta1_hat) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (double xv : d.x.flat()) {
    const double e = std::exp(xv * beta1_hat);
    s0 += e;
    s1 += xv * e;
    s2 += xv * xv * e;
  }
  const double cells = static_cast<double>(d.x.size());
  return {s0 / cells, s1 / cells, s2 / cells};
}

namespace detail {

inline double tau_squared_formula(double beta0, double sigma2, double phi0, double phi1, double phi2) {
  const double denom = phi2 * phi0 - phi1 * phi1;
  if (!(denom > 1e-12 * std::fabs(phi2 * phi0))) {
    throw Error(ErrorCode::SingularDenominator,
                "phi''(b) phi(b) - phi'(b)^2 vanishes; the predictor carries no information about beta1");
  }
  return std::exp(-0.5 * sigma2 - beta0) * phi0 / denom;
}

}  // namespace detail

// Plug-in estimate of the asymptotic variance constant of beta1_hat.
inline double tau_squared_hat(double beta0_hat, double sigma2_hat, const MgfMoments& mm) {
  return detail::tau_squared_formula(beta0_hat, sigma2_hat, mm.phi0_hat, mm.phi1_hat, mm.phi2_hat);
}

inline double tau_squared_hat(const GvaFit& fit, const MgfMoments& mm) {
  return tau_squared_hat(fit.params.beta0, fit.params.sigma2, mm);
}

// The same constant at the true parameters, from the closed-form MGF.
inline double tau_squared_true(const ModelParams& truth, PredictorDistribution dist) {
  const double b = truth.beta1;
  return detail::tau_squared_formula(truth.beta0, truth.sigma2, mgf(dist, b, 0), mgf(dist, b, 1), mgf(dist, b, 2));
}

struct StandardErrors {
  double beta0 = 0.0;
  double beta1 = 0.0;
  double sigma2 = 0.0;

  double of(Parameter which) const noexcept {
    switch (which) {
      case Parameter::Beta0: return beta0;
      case Parameter::Beta1: return beta1;
      default: return sigma2;
    }
  }
};

// beta0 and sigma2 shrink at rate m^{-1/2}; beta1 at rate (mn)^{-1/2}.
inline StandardErrors studentized_standard_errors(double sigma2_hat, double tau2_hat, std::size_t m, std::size_t n) {
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  return {std::sqrt(sigma2_hat / md), std::sqrt(tau2_hat / (md * nd)), sigma2_hat * std::sqrt(2.0 / md)};
}

inline double two_sided_z(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  return normal_quantile(1.0 - 0.5 * alpha);
}

// Intervals estimate +/- z_{1-alpha/2} * SE built from given estimates.
inline CiSet studentized_intervals(const ModelParams& est, double tau2_hat, std::size_t m, std::size_t n,
                                   double alpha) {
  const double z = two_sided_z(alpha);
  const StandardErrors se = studentized_standard_errors(est.sigma2, tau2_hat, m, n);
  CiSet ci;
  ci.alpha = alpha;
  ci.beta0_interval = symmetric_interval(est.beta0, z * se.beta0);
  ci.beta1_interval = symmetric_interval(est.beta1, z * se.beta1);
  ci.sigma2_interval = symmetric_interval(est.sigma2, z * se.sigma2);
  ci.tau2_hat = tau2_hat;
  return ci;
}

inline CiSet confidence_intervals(const GvaFit& fit, const Dataset& d, double alpha) {
  if (!fit.converged) throw Error(ErrorCode::NotConverged, "confidence intervals need a converged fit");
  const double tau2 = tau_squared_hat(fit, estimate_mgf_moments(d, fit.params.beta1));
  return studentized_intervals(fit.params, tau2, d.m(), d.n(), alpha);
}

inline double wald_statistic(const GvaFit& fit, const Dataset& d, Parameter which, double null_value) {
  if (!fit.converged) throw Error(ErrorCode::NotConverged, "Wald statistics need a converged fit");
  const double tau2 = tau_squared_hat(fit, estimate_mgf_moments(d, fit.params.beta1));
  const StandardErrors se = studentized_standard_errors(fit.params.sigma2, tau2, d.m(), d.n());
  return (parameter_value(fit.params, which) - null_value) / se.of(which);
}

}  // namespace gvapois
