#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gvapois/core_types.hpp"
#include "gvapois/error.hpp"
#include "gvapois/gauss_hermite.hpp"
#include "gvapois/gva_fitter.hpp"
#include "gvapois/inference.hpp"

namespace gvapois {

inline constexpr int kDefaultGhqNodes = 25;

// g(u) = Y u - B exp(u) - u^2 / (2 sigma2), the log-integrand of one group's
// random-intercept integral. Strictly concave in u.
struct GroupIntegrand {
  double y_total = 0.0;
  double b = 1.0;
  double sigma2 = 1.0;

  double operator()(double u) const {
    const double eu = std::exp(u);
    if (!std::isfinite(eu)) return -std::numeric_limits<double>::infinity();
    return y_total * u - b * eu - 0.5 * u * u / sigma2;
  }
  double slope(double u) const { return y_total - b * std::exp(u) - u / sigma2; }
  double curvature(double u) const { return b * std::exp(u) + 1.0 / sigma2; }  // -g''(u)
};

struct Mode {
  double location = 0.0;
  double curvature = 1.0;
};

// Safeguarded Newton for g'(u) = 0 inside a bracket that is valid by
// construction; bisection whenever the Newton step leaves it.
inline Mode find_mode(const GroupIntegrand& g, std::size_t group = 0) {
  double hi = g.sigma2 * g.y_total;                              // g'(hi) <= -B exp(hi) < 0
  double lo = std::min(0.0, g.sigma2 * (g.y_total - g.b)) - 1.0;  // g'(lo) > 0
  double u = std::clamp(std::log((g.y_total + 0.5) / g.b), -30.0, 30.0);
  u = std::clamp(u, lo, hi);
  for (int it = 0; it < 500; ++it) {
    const double s = g.slope(u);
    if (s > 0.0) lo = u; else hi = u;
    const double scale = 1.0 + g.y_total + g.b * std::exp(u) + std::fabs(u) / g.sigma2;
    if (std::fabs(s) <= 1e-14 * scale || hi - lo <= 1e-15 * std::max(1.0, std::fabs(u))) {
      return {u, g.curvature(u)};
    }
    double next = u + s / g.curvature(u);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    u = next;
  }
  throw Error(ErrorCode::ModeSearchFailure, "ModeSearchFailure(" + std::to_string(group) + ")");
}

namespace detail {

struct GroupQuadrature {
  double log_integral = 0.0;
  double mean_exp_u = 0.0;  // posterior E[exp(u)]
  double mean_u2 = 0.0;     // posterior E[u^2]
};

inline GroupQuadrature integrate_group(const GroupIntegrand& g, const GaussHermiteRule& rule, std::size_t group) {
  const Mode mode = find_mode(g, group);
  const double scale = std::sqrt(2.0 / mode.curvature);
  const std::size_t k = rule.nodes.size();
  std::vector<double> log_terms(k);
  std::vector<double> u(k);
  for (std::size_t q = 0; q < k; ++q) {
    const double t = rule.nodes[q];
    u[q] = mode.location + scale * t;
    log_terms[q] = rule.log_weights[q] + t * t + g(u[q]);
  }
  const double lse = log_sum_exp(log_terms);
  GroupQuadrature out;
  out.log_integral = std::log(scale) + lse;
  for (std::size_t q = 0; q < k; ++q) {
    const double w = std::exp(log_terms[q] - lse);
    if (w == 0.0) continue;
    out.mean_exp_u += w * std::exp(u[q]);
    out.mean_u2 += w * u[q] * u[q];
  }
  return out;
}

struct ExactEvaluation {
  double loglik = 0.0;
  Eigen::Vector3d gradient = Eigen::Vector3d::Zero();  // in (beta0, beta1, log sigma2)
};

inline ExactEvaluation evaluate_exact(const ModelParams& p, const Dataset& d, const GaussHermiteRule& rule) {
  const std::size_t m = d.m();
  double loglik = -0.5 * static_cast<double>(m) * std::log(2.0 * std::numbers::pi * p.sigma2);
  double d_beta0 = 0.0, d_beta1 = 0.0, d_s = -0.5 * static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) {
    double y_total = 0.0, b = 0.0, b1 = 0.0;
    for (std::size_t j = 0; j < d.n(); ++j) {
      const double xv = d.x(i, j);
      const double yv = static_cast<double>(d.y(i, j));
      const double eta = p.beta0 + p.beta1 * xv;
      const double e = std::exp(eta);
      loglik += yv * eta - std::lgamma(yv + 1.0);
      y_total += yv;
      b += e;
      b1 += xv * e;
      d_beta0 += yv;
      d_beta1 += xv * yv;
    }
    const auto gq = integrate_group(GroupIntegrand{y_total, b, p.sigma2}, rule, i);
    loglik += gq.log_integral;
    d_beta0 -= b * gq.mean_exp_u;
    d_beta1 -= b1 * gq.mean_exp_u;
    d_s += 0.5 * gq.mean_u2 / p.sigma2;
  }
  if (!std::isfinite(loglik)) throw Error(ErrorCode::NonFiniteLikelihood, "exact log-likelihood is not finite");
  ExactEvaluation out;
  out.loglik = loglik;
  out.gradient << d_beta0, d_beta1, d_s;
  return out;
}

inline ModelParams from_unconstrained(const Eigen::Vector3d& theta) {
  return {theta(0), theta(1), std::exp(theta(2))};
}

inline Eigen::Vector3d to_unconstrained(const ModelParams& p) {
  return {p.beta0, p.beta1, std::log(p.sigma2)};
}

}  // namespace detail

// Marginal log-likelihood by adaptive Gauss-Hermite quadrature: each group's
// grid is centered at the integrand's mode and scaled by its curvature.
inline double exact_loglik(const ModelParams& p, const Dataset& d, int nodes = kDefaultGhqNodes) {
  if (nodes < 5) throw Error(ErrorCode::InvalidArgument, "quadrature needs at least 5 nodes");
  validate_params(p);
  validate_dataset(d);
  return detail::evaluate_exact(p, d, gauss_hermite_rule(static_cast<std::size_t>(nodes))).loglik;
}

// Analytic score in (beta0, beta1, log sigma2): posterior expectations under
// the same quadrature.
inline Eigen::Vector3d exact_loglik_gradient(const ModelParams& p, const Dataset& d, int nodes = kDefaultGhqNodes) {
  if (nodes < 5) throw Error(ErrorCode::InvalidArgument, "quadrature needs at least 5 nodes");
  validate_params(p);
  validate_dataset(d);
  return detail::evaluate_exact(p, d, gauss_hermite_rule(static_cast<std::size_t>(nodes))).gradient;
}

struct MleFit {
  ModelParams params;
  Eigen::Matrix3d information = Eigen::Matrix3d::Zero();  // observed, in (beta0, beta1, log sigma2)
  double loglik = 0.0;
  double gradient_sup_norm = 0.0;
  int iterations = 0;
  int nodes = kDefaultGhqNodes;
};

namespace detail {

// Negative Hessian by central differences of the analytic gradient.
inline Eigen::Matrix3d observed_information(const Eigen::Vector3d& theta, const Dataset& d,
                                            const GaussHermiteRule& rule) {
  Eigen::Matrix3d h;
  for (int k = 0; k < 3; ++k) {
    const double step = 1e-5 * std::max(1.0, std::fabs(theta(k)));
    Eigen::Vector3d up = theta, down = theta;
    up(k) += step;
    down(k) -= step;
    const Eigen::Vector3d g_up = evaluate_exact(from_unconstrained(up), d, rule).gradient;
    const Eigen::Vector3d g_down = evaluate_exact(from_unconstrained(down), d, rule).gradient;
    h.col(k) = (g_up - g_down) / (2.0 * step);
  }
  return -0.5 * (h + h.transpose());
}

}  // namespace detail

// Maximum likelihood by BFGS on (beta0, beta1, log sigma2) with a backtracking
// line search, started from the GVA estimate when it is available.
inline MleFit fit_mle(const Dataset& d, int nodes = kDefaultGhqNodes, const FitOptions& opts = {}) {
  if (nodes < 5) throw Error(ErrorCode::InvalidArgument, "quadrature needs at least 5 nodes");
  validate_dataset(d);
  validate_options(opts);
  std::int64_t y_sum = 0;
  for (auto v : d.y.flat()) y_sum += v;
  if (y_sum == 0) {
    throw Error(ErrorCode::AllZeroResponse, "every count is zero; the intercept estimate diverges to -infinity");
  }
  const GaussHermiteRule rule = gauss_hermite_rule(static_cast<std::size_t>(nodes));

  ModelParams start;
  try {
    start = fit_gva_unchecked(d, opts).params;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::DegenerateDesign) throw;
    const auto [b0, b1] = detail::pooled_poisson_start(d);
    start = {b0, b1, 1.0};
  }

  Eigen::Vector3d theta = detail::to_unconstrained(start);
  auto eval = detail::evaluate_exact(start, d, rule);
  Eigen::Matrix3d inv_hess = Eigen::Matrix3d::Identity();
  {
    Eigen::LLT<Eigen::Matrix3d> llt(detail::observed_information(theta, d, rule));
    if (llt.info() == Eigen::Success) inv_hess = llt.solve(Eigen::Matrix3d::Identity());
  }

  const double grad_tol = opts.residual_tol;
  int iter = 0;
  for (iter = 0; iter < opts.max_outer_iters; ++iter) {
    if (eval.gradient.cwiseAbs().maxCoeff() < grad_tol) break;
    Eigen::Vector3d dir = inv_hess * eval.gradient;
    if (!(dir.dot(eval.gradient) > 0.0)) {
      inv_hess = Eigen::Matrix3d::Identity() / std::max(1.0, eval.gradient.norm());
      dir = inv_hess * eval.gradient;
    }
    double t = 1.0;
    bool accepted = false;
    detail::ExactEvaluation next;
    Eigen::Vector3d theta_next;
    for (int half = 0; half < 60; ++half) {
      theta_next = theta + t * dir;
      try {
        next = detail::evaluate_exact(detail::from_unconstrained(theta_next), d, rule);
        if (next.loglik >= eval.loglik + 1e-4 * t * dir.dot(eval.gradient) ||
            (half > 0 && next.loglik >= eval.loglik - 1e-14 * std::fabs(eval.loglik) &&
             next.gradient.cwiseAbs().maxCoeff() < eval.gradient.cwiseAbs().maxCoeff())) {
          accepted = true;
          break;
        }
      } catch (const Error&) {
      }
      t *= 0.5;
    }
    if (!accepted) break;
    const Eigen::Vector3d s = theta_next - theta;
    const Eigen::Vector3d yv = eval.gradient - next.gradient;  // gradient of the negative loglik
    const double sy = s.dot(yv);
    if (sy > 1e-16 * s.norm() * yv.norm()) {
      const double rho = 1.0 / sy;
      const Eigen::Matrix3d id = Eigen::Matrix3d::Identity();
      inv_hess = (id - rho * s * yv.transpose()) * inv_hess * (id - rho * yv * s.transpose()) + rho * s * s.transpose();
    }
    theta = theta_next;
    eval = next;
  }

  MleFit out;
  out.params = detail::from_unconstrained(theta);
  out.loglik = eval.loglik;
  out.gradient_sup_norm = eval.gradient.cwiseAbs().maxCoeff();
  out.iterations = iter;
  out.nodes = nodes;
  if (!(out.gradient_sup_norm < 1e-6)) {
    throw Error(ErrorCode::NotConverged,
                "MLE search stopped with gradient sup-norm " + std::to_string(out.gradient_sup_norm));
  }
  out.information = detail::observed_information(theta, d, rule);
  Eigen::LLT<Eigen::Matrix3d> llt(out.information);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NonPositiveDefiniteInformation, "observed information is not positive definite");
  }
  return out;
}

// Wald intervals from the observed information; information is expressed in
// (beta0, beta1, log sigma2), so the sigma2 interval uses the delta method.
inline CiSet exact_ci(const ModelParams& mle, const Eigen::Matrix3d& info, double alpha) {
  Eigen::LLT<Eigen::Matrix3d> llt(info);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularInformation, "information is not invertible");
  const Eigen::Matrix3d cov = llt.solve(Eigen::Matrix3d::Identity());
  if (!cov.allFinite() || cov.diagonal().minCoeff() <= 0.0) {
    throw Error(ErrorCode::SingularInformation, "information is not invertible");
  }
  const double z = two_sided_z(alpha);
  CiSet ci;
  ci.alpha = alpha;
  ci.beta0_interval = symmetric_interval(mle.beta0, z * std::sqrt(cov(0, 0)));
  ci.beta1_interval = symmetric_interval(mle.beta1, z * std::sqrt(cov(1, 1)));
  ci.sigma2_interval = symmetric_interval(mle.sigma2, z * mle.sigma2 * std::sqrt(cov(2, 2)));
  return ci;
}

inline CiSet exact_ci(const MleFit& fit, double alpha) { return exact_ci(fit.params, fit.information, alpha); }

}  // namespace gvapois
