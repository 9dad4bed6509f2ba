#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "gvapois/core_types.hpp"
#include "gvapois/error.hpp"

namespace gvapois {

// Largest exponent admitted in exp(beta0 + beta1 X + mu + lambda/2).
inline constexpr double kMaxExponent = 700.0;

struct IterationRecord {
  int iteration = 0;
  ModelParams params;
  const VariationalParams* variational = nullptr;
  double lower_bound = 0.0;
};

struct FitOptions {
  double outer_tol = 1e-10;     // relative change of the bound between outer iterations
  double residual_tol = 1e-8;   // sup-norm of the stationarity residuals
  int max_outer_iters = 500;
  double inner_tol = 1e-12;
  int max_inner_iters = 100;
  std::optional<std::pair<ModelParams, VariationalParams>> init;
  std::function<void(const IterationRecord&)> on_iteration;  // called after each outer iteration
};

inline void validate_options(const FitOptions& o) {
  if (!(o.outer_tol > 0.0) || !(o.residual_tol > 0.0) || !(o.inner_tol > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "fit tolerances must be > 0");
  }
  if (o.max_outer_iters < 1 || o.max_inner_iters < 1) {
    throw Error(ErrorCode::InvalidArgument, "iteration caps must be >= 1");
  }
}

class NotConvergedError : public Error {
 public:
  NotConvergedError(const std::string& what, GvaFit best)
      : Error(ErrorCode::NotConverged, what), best_(std::move(best)) {}
  const GvaFit& best() const noexcept { return best_; }

 private:
  GvaFit best_;
};

namespace detail {

inline void check_variational(const VariationalParams& v, const Dataset& d) {
  if (v.mu.size() != d.m() || v.lambda.size() != d.m()) {
    throw Error(ErrorCode::ShapeMismatch, "variational parameters do not match the number of groups");
  }
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!(v.lambda[i] > 0.0) || !std::isfinite(v.lambda[i]) || !std::isfinite(v.mu[i])) {
      throw Error(ErrorCode::InvalidArgument, "lambda[" + std::to_string(i) + "] must be finite and > 0");
    }
  }
}

inline double checked_exp(double arg) {
  if (!(arg <= kMaxExponent)) {
    throw Error(ErrorCode::NonFiniteBound, "exponent " + std::to_string(arg) + " overflows the bound");
  }
  return std::exp(arg);
}

// Data summaries that do not depend on the parameters.
struct Panel {
  const Dataset* data = nullptr;
  std::vector<double> y_total;
  std::vector<double> x_min, x_max;
  double sum_xy = 0.0;
  double sum_log_factorial = 0.0;

  explicit Panel(const Dataset& d) : data(&d), y_total(d.m()), x_min(d.m()), x_max(d.m()) {
    for (std::size_t i = 0; i < d.m(); ++i) {
      double yt = 0.0;
      auto xr = d.x.row(i);
      auto yr = d.y.row(i);
      x_min[i] = *std::min_element(xr.begin(), xr.end());
      x_max[i] = *std::max_element(xr.begin(), xr.end());
      for (std::size_t j = 0; j < d.n(); ++j) {
        const double yv = static_cast<double>(yr[j]);
        yt += yv;
        sum_xy += xr[j] * yv;
        sum_log_factorial += std::lgamma(yv + 1.0);
      }
      y_total[i] = yt;
    }
  }

  std::size_t m() const noexcept { return y_total.size(); }
};

// Per-group sums of exp(beta1 X_ij) and its first two beta1-derivatives.
struct SlopeSums {
  double beta1 = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> c0, c1, c2;
  std::vector<double> log_c0;
  std::vector<double> max_slope_term;  // max_j beta1 X_ij

  void update(const Panel& panel, double b1) {
    const Dataset& d = *panel.data;
    const std::size_t m = d.m();
    c0.assign(m, 0.0);
    c1.assign(m, 0.0);
    c2.assign(m, 0.0);
    log_c0.assign(m, 0.0);
    max_slope_term.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double top = std::max(b1 * panel.x_min[i], b1 * panel.x_max[i]);
      max_slope_term[i] = top;
      if (top > kMaxExponent) {
        throw Error(ErrorCode::NonFiniteBound, "beta1 * x overflows in group " + std::to_string(i));
      }
      double s0 = 0.0, s1 = 0.0, s2 = 0.0;
      for (double xv : d.x.row(i)) {
        const double e = std::exp(b1 * xv);
        s0 += e;
        s1 += xv * e;
        s2 += xv * xv * e;
      }
      c0[i] = s0;
      c1[i] = s1;
      c2[i] = s2;
      log_c0[i] = std::log(s0);
    }
    beta1 = b1;
  }
};

struct GroupState {
  double mu = 0.0;
  double lambda = 1.0;
};

enum class InnerStatus { Converged, Diverged, Overflow };

// Maximizes Y mu - B exp(mu + lambda/2) - (mu^2 + lambda) / (2 sigma2) + log(lambda) / 2
// over (mu, log lambda) by damped Newton. The objective is jointly concave in
// these coordinates, so the Newton direction is always an ascent direction.
inline InnerStatus solve_group(double y_total, double log_b, double max_cell_term, double precision,
                               GroupState& g, double tol, int max_iters) {
  double mu = g.mu;
  double rho = std::log(g.lambda);

  auto objective = [&](double mu_, double rho_, double& e_out) -> double {
    const double lam = std::exp(rho_);
    const double arg = log_b + mu_ + 0.5 * lam;
    if (!(max_cell_term + arg - log_b <= kMaxExponent) || !(arg <= kMaxExponent)) {
      return -std::numeric_limits<double>::infinity();
    }
    e_out = std::exp(arg);
    return y_total * mu_ - e_out - 0.5 * precision * (mu_ * mu_ + lam) + 0.5 * rho_;
  };

  double e = 0.0;
  double h = objective(mu, rho, e);
  if (!std::isfinite(h)) return InnerStatus::Overflow;

  for (int it = 0; it < max_iters; ++it) {
    const double lam = std::exp(rho);
    const double r_mu = y_total - e - precision * mu;     // stationarity in mu
    const double r_lam = 1.0 / lam - e - precision;       // stationarity in lambda (times 2)
    const bool done = std::fabs(r_mu) <= tol * std::max(1.0, y_total + e + precision * std::fabs(mu)) &&
                      std::fabs(r_lam) <= tol * std::max(1.0, 1.0 / lam + e + precision);
    if (done) {
      g.mu = mu;
      g.lambda = lam;
      return InnerStatus::Converged;
    }

    const double g_mu = r_mu;
    const double g_rho = 0.5 * lam * r_lam;
    const double h_mm = -e - precision;
    const double h_mr = -0.5 * lam * e;
    const double h_rr = -0.5 * lam * e - 0.25 * lam * lam * e - 0.5 * precision * lam;
    const double det = h_mm * h_rr - h_mr * h_mr;
    double d_mu = -(h_rr * g_mu - h_mr * g_rho) / det;
    double d_rho = -(-h_mr * g_mu + h_mm * g_rho) / det;
    if (!std::isfinite(d_mu) || !std::isfinite(d_rho)) return InnerStatus::Diverged;

    // Near the optimum the gain in h drops below its rounding error; there a
    // step is also accepted when it shrinks the stationarity residual.
    const double flat = 1e-13 * (1.0 + std::fabs(y_total * mu) + e + 0.5 * precision * (mu * mu + lam) +
                                 0.5 * std::fabs(rho));
    const double resid = std::hypot(r_mu, r_lam);
    double step = 1.0;
    bool moved = false;
    for (int half = 0; half < 60; ++half) {
      double e_trial = 0.0;
      const double mu_t = mu + step * d_mu;
      const double rho_t = rho + step * d_rho;
      const double h_trial = objective(mu_t, rho_t, e_trial);
      if (!std::isfinite(h_trial)) {
        step *= 0.5;
        continue;
      }
      const bool ascent = h_trial > h;
      const bool settles = h_trial >= h - flat &&
                           std::hypot(y_total - e_trial - precision * mu_t,
                                      std::exp(-rho_t) - e_trial - precision) < resid;
      if (ascent || settles) {
        mu += step * d_mu;
        rho += step * d_rho;
        h = h_trial;
        e = e_trial;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) return InnerStatus::Diverged;
  }
  return InnerStatus::Diverged;
}

// Working state of the outer optimization.
struct FitState {
  ModelParams params;
  std::vector<GroupState> groups;
  SlopeSums sums;
};

inline double log_b(const FitState& s, std::size_t i) { return s.params.beta0 + s.sums.log_c0[i]; }

// Throws InnerDivergence or NonFiniteBound; `failed_group` receives the index.
inline InnerStatus solve_all_groups(const Panel& panel, FitState& s, double tol, int max_iters,
                                    std::size_t* failed_group = nullptr) {
  const double precision = 1.0 / s.params.sigma2;
  for (std::size_t i = 0; i < panel.m(); ++i) {
    const InnerStatus st = solve_group(panel.y_total[i], log_b(s, i), s.params.beta0 + s.sums.max_slope_term[i],
                                       precision, s.groups[i], tol, max_iters);
    if (st != InnerStatus::Converged) {
      if (failed_group) *failed_group = i;
      return st;
    }
  }
  return InnerStatus::Converged;
}

inline void throw_inner(InnerStatus st, std::size_t group) {
  if (st == InnerStatus::Overflow) {
    throw Error(ErrorCode::NonFiniteBound, "exponent overflow while solving group " + std::to_string(group));
  }
  throw Error(ErrorCode::InnerDivergence, "InnerDivergence(" + std::to_string(group) + ")");
}

inline double state_lower_bound(const Panel& panel, const FitState& s) {
  const double precision = 1.0 / s.params.sigma2;
  const double m = static_cast<double>(panel.m());
  double total = s.params.beta1 * panel.sum_xy - panel.sum_log_factorial - 0.5 * m * std::log(s.params.sigma2) +
                 0.5 * m;
  for (std::size_t i = 0; i < panel.m(); ++i) {
    const auto& g = s.groups[i];
    const double e = std::exp(log_b(s, i) + g.mu + 0.5 * g.lambda);
    total += panel.y_total[i] * (s.params.beta0 + g.mu) - e - 0.5 * precision * (g.mu * g.mu + g.lambda) +
             0.5 * std::log(g.lambda);
  }
  return total;
}

inline double closed_form_sigma2(const FitState& s) {
  double acc = 0.0;
  for (const auto& g : s.groups) acc += g.lambda + g.mu * g.mu;
  return acc / static_cast<double>(s.groups.size());
}

// Left-hand sides of the five families of stationarity equations.
inline std::vector<double> state_residuals(const Panel& panel, const FitState& s) {
  const std::size_t m = panel.m();
  const double precision = 1.0 / s.params.sigma2;
  std::vector<double> r(3 + 2 * m, 0.0);
  double r_b0 = 0.0, r_b1 = panel.sum_xy, second_moment = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto& g = s.groups[i];
    const double tilt = std::exp(s.params.beta0 + g.mu + 0.5 * g.lambda);
    const double e = tilt * s.sums.c0[i];
    r_b0 += panel.y_total[i] - e;
    r_b1 -= tilt * s.sums.c1[i];
    second_moment += g.lambda + g.mu * g.mu;
    r[3 + i] = 1.0 / g.lambda - e - precision;
    r[3 + m + i] = panel.y_total[i] - e - precision * g.mu;
  }
  r[0] = r_b0;
  r[1] = r_b1;
  r[2] = second_moment / static_cast<double>(m) - s.params.sigma2;
  return r;
}

inline double sup_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s = std::max(s, std::fabs(x));
  return s;
}

// Gradient and Hessian of the bound with (mu, lambda) maximized out, in the
// coordinates (beta0, beta1, log sigma2). Requires the groups to be at their
// inner optimum.
inline void profile_derivatives(const Panel& panel, const FitState& s, Eigen::Vector3d& grad,
                                Eigen::Matrix3d& hess) {
  const double precision = 1.0 / s.params.sigma2;
  grad.setZero();
  hess.setZero();
  double sum_e = 0.0, sum_f = 0.0, sum_g = 0.0, second_moment = 0.0;
  Eigen::Matrix3d correction = Eigen::Matrix3d::Zero();
  for (std::size_t i = 0; i < panel.m(); ++i) {
    const auto& gr = s.groups[i];
    const double lam = gr.lambda;
    const double tilt = std::exp(s.params.beta0 + gr.mu + 0.5 * lam);
    const double e = tilt * s.sums.c0[i];
    const double f = tilt * s.sums.c1[i];
    const double gg = tilt * s.sums.c2[i];
    sum_e += e;
    sum_f += f;
    sum_g += gg;
    second_moment += gr.mu * gr.mu + lam;

    Eigen::Matrix<double, 3, 2> cross;
    cross << -e, -0.5 * lam * e,
             -f, -0.5 * lam * f,
             precision * gr.mu, 0.5 * precision * lam;
    Eigen::Matrix2d inner;
    inner << -e - precision, -0.5 * lam * e,
             -0.5 * lam * e, -0.5 * lam * e - 0.25 * lam * lam * e - 0.5 * precision * lam;
    correction += cross * inner.inverse() * cross.transpose();
  }
  const double m = static_cast<double>(panel.m());
  double y_sum = 0.0;
  for (double yt : panel.y_total) y_sum += yt;
  grad << y_sum - sum_e, panel.sum_xy - sum_f, -0.5 * m + 0.5 * precision * second_moment;
  hess << -sum_e, -sum_f, 0.0,
          -sum_f, -sum_g, 0.0,
          0.0, 0.0, -0.5 * precision * second_moment;
  hess -= correction;
}

inline GvaFit to_fit(const FitState& s, double lb, int iterations, bool converged, double residual) {
  GvaFit fit;
  fit.params = s.params;
  fit.variational.mu.resize(s.groups.size());
  fit.variational.lambda.resize(s.groups.size());
  for (std::size_t i = 0; i < s.groups.size(); ++i) {
    fit.variational.mu[i] = s.groups[i].mu;
    fit.variational.lambda[i] = s.groups[i].lambda;
  }
  fit.lower_bound = lb;
  fit.iterations = iterations;
  fit.converged = converged;
  fit.residual_sup_norm = residual;
  return fit;
}

inline FitState make_state(const Panel& panel, const ModelParams& p, const VariationalParams* v) {
  FitState s;
  s.params = p;
  s.groups.resize(panel.m());
  for (std::size_t i = 0; i < panel.m(); ++i) {
    if (v) {
      s.groups[i] = {v->mu[i], v->lambda[i]};
    } else {
      s.groups[i] = {0.0, 0.5 * p.sigma2};
    }
  }
  s.sums.update(panel, p.beta1);
  return s;
}

// Poisson regression of Y on X ignoring the random effects: a few damped
// Newton steps from the origin.
inline std::pair<double, double> pooled_poisson_start(const Dataset& d, int steps = 5) {
  double b0 = 0.0, b1 = 0.0;
  auto loglik = [&](double a0, double a1) {
    double ll = 0.0;
    for (std::size_t k = 0; k < d.x.size(); ++k) {
      const double eta = a0 + a1 * d.x.flat()[k];
      if (eta > kMaxExponent) return -std::numeric_limits<double>::infinity();
      ll += static_cast<double>(d.y.flat()[k]) * eta - std::exp(eta);
    }
    return ll;
  };
  double current = loglik(b0, b1);
  for (int it = 0; it < steps; ++it) {
    double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
    for (std::size_t k = 0; k < d.x.size(); ++k) {
      const double xv = d.x.flat()[k];
      const double mean = std::exp(b0 + b1 * xv);
      const double resid = static_cast<double>(d.y.flat()[k]) - mean;
      g0 += resid;
      g1 += xv * resid;
      h00 += mean;
      h01 += xv * mean;
      h11 += xv * xv * mean;
    }
    const double det = h00 * h11 - h01 * h01;
    if (!(det > 0.0)) break;
    const double d0 = (h11 * g0 - h01 * g1) / det;
    const double d1 = (-h01 * g0 + h00 * g1) / det;
    double step = 1.0;
    for (int half = 0; half < 40; ++half) {
      const double trial = loglik(b0 + step * d0, b1 + step * d1);
      if (trial >= current) {
        b0 += step * d0;
        b1 += step * d1;
        current = trial;
        break;
      }
      step *= 0.5;
    }
  }
  return {b0, b1};
}

}  // namespace detail

// Gaussian variational lower bound of the marginal log-likelihood.
inline double lower_bound(const ModelParams& p, const VariationalParams& v, const Dataset& d) {
  validate_params(p);
  detail::check_variational(v, d);
  const double m = static_cast<double>(d.m());
  double total = -0.5 * m * std::log(p.sigma2) + 0.5 * m;
  for (std::size_t i = 0; i < d.m(); ++i) {
    const double mu = v.mu[i];
    const double lam = v.lambda[i];
    for (std::size_t j = 0; j < d.n(); ++j) {
      const double eta = p.beta0 + p.beta1 * d.x(i, j) + mu;
      const double yv = static_cast<double>(d.y(i, j));
      total += yv * eta - detail::checked_exp(eta + 0.5 * lam) - std::lgamma(yv + 1.0);
    }
    total += -0.5 * (mu * mu + lam) / p.sigma2 + 0.5 * std::log(lam);
  }
  if (!std::isfinite(total)) throw Error(ErrorCode::NonFiniteBound, "lower bound is not finite");
  return total;
}

// Gradient of the bound in the unconstrained coordinates
// [beta0, beta1, log sigma2, mu_0..mu_{m-1}, log lambda_0..log lambda_{m-1}].
inline std::vector<double> lower_bound_gradient(const ModelParams& p, const VariationalParams& v,
                                                const Dataset& d) {
  validate_params(p);
  detail::check_variational(v, d);
  const std::size_t m = d.m();
  const double precision = 1.0 / p.sigma2;
  std::vector<double> grad(3 + 2 * m, 0.0);
  double second_moment = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double mu = v.mu[i];
    const double lam = v.lambda[i];
    double y_sum = 0.0, e_sum = 0.0;
    for (std::size_t j = 0; j < d.n(); ++j) {
      const double xv = d.x(i, j);
      const double yv = static_cast<double>(d.y(i, j));
      const double e = detail::checked_exp(p.beta0 + p.beta1 * xv + mu + 0.5 * lam);
      grad[0] += yv - e;
      grad[1] += xv * (yv - e);
      y_sum += yv;
      e_sum += e;
    }
    second_moment += mu * mu + lam;
    grad[3 + i] = y_sum - e_sum - precision * mu;
    grad[3 + m + i] = 0.5 * lam * (1.0 / lam - e_sum - precision);
  }
  grad[2] = -0.5 * static_cast<double>(m) + 0.5 * precision * second_moment;
  return grad;
}

// Optimal (mu_i, lambda_i) for every group with (beta, sigma2) held fixed.
inline VariationalParams solve_variational(const ModelParams& p, const Dataset& d, const FitOptions& opts = {}) {
  validate_params(p);
  validate_dataset(d);
  validate_options(opts);
  detail::Panel panel(d);
  const VariationalParams* start = nullptr;
  if (opts.init) {
    detail::check_variational(opts.init->second, d);
    start = &opts.init->second;
  }
  detail::FitState s = detail::make_state(panel, p, start);
  std::size_t failed = 0;
  const auto st = detail::solve_all_groups(panel, s, opts.inner_tol, opts.max_inner_iters, &failed);
  if (st != detail::InnerStatus::Converged) detail::throw_inner(st, failed);
  return detail::to_fit(s, 0.0, 0, true, 0.0).variational;
}

// Evaluates the left-hand sides of the stationarity equations at a fit:
// [d/dbeta0, d/dbeta1, sigma2 fixed point, lambda_i equations, mu_i equations].
inline std::vector<double> stationarity_residuals(const GvaFit& fit, const Dataset& d) {
  detail::Panel panel(d);
  detail::FitState s = detail::make_state(panel, fit.params, &fit.variational);
  return detail::state_residuals(panel, s);
}

// Runs the optimizer and reports whatever it reached; fit_gva() adds the
// NotConverged check.
inline GvaFit fit_gva_unchecked(const Dataset& d, const FitOptions& opts = {}) {
  validate_dataset(d);
  validate_options(opts);
  std::int64_t y_sum = 0;
  for (auto v : d.y.flat()) y_sum += v;
  if (y_sum == 0) {
    throw Error(ErrorCode::AllZeroResponse, "every count is zero; the intercept estimate diverges to -infinity");
  }
  {
    const double first = d.x.flat()[0];
    bool varies = false;
    for (double xv : d.x.flat()) varies = varies || xv != first;
    if (!varies) throw Error(ErrorCode::DegenerateDesign, "predictor is constant; beta1 is not identified");
  }

  detail::Panel panel(d);
  detail::FitState s;
  if (opts.init) {
    validate_params(opts.init->first);
    detail::check_variational(opts.init->second, d);
    s = detail::make_state(panel, opts.init->first, &opts.init->second);
  } else {
    const auto [b0, b1] = detail::pooled_poisson_start(d);
    s = detail::make_state(panel, ModelParams{b0, b1, 1.0}, nullptr);
  }

  auto solve_inner = [&](detail::FitState& state) {
    std::size_t failed = 0;
    const auto st = detail::solve_all_groups(panel, state, opts.inner_tol, opts.max_inner_iters, &failed);
    if (st != detail::InnerStatus::Converged) detail::throw_inner(st, failed);
  };

  auto polish = [&](detail::FitState& state) {
    state.params.sigma2 = detail::closed_form_sigma2(state);
    solve_inner(state);
    state.params.sigma2 = detail::closed_form_sigma2(state);
  };

  solve_inner(s);
  double lb = detail::state_lower_bound(panel, s);
  double residual = detail::sup_norm(detail::state_residuals(panel, s));
  bool converged = false;
  int iter = 0;

  for (iter = 1; iter <= opts.max_outer_iters; ++iter) {
    const double lb_start = lb;

    // (b) closed-form variance update, then re-solve the groups.
    s.params.sigma2 = detail::closed_form_sigma2(s);
    solve_inner(s);

    // (c) Newton step on the profiled bound over (beta0, beta1, log sigma2).
    lb = detail::state_lower_bound(panel, s);
    Eigen::Vector3d grad;
    Eigen::Matrix3d hess;
    detail::profile_derivatives(panel, s, grad, hess);
    Eigen::Vector3d dir;
    Eigen::LLT<Eigen::Matrix3d> llt(-hess);
    if (llt.info() == Eigen::Success) {
      dir = llt.solve(grad);
    } else {
      // Fixed-effects Newton step with the groups frozen.
      Eigen::Matrix2d info = -hess.topLeftCorner<2, 2>();
      double sum_e = 0.0, sum_f = 0.0, sum_g = 0.0;
      for (std::size_t i = 0; i < panel.m(); ++i) {
        const double tilt = std::exp(s.params.beta0 + s.groups[i].mu + 0.5 * s.groups[i].lambda);
        sum_e += tilt * s.sums.c0[i];
        sum_f += tilt * s.sums.c1[i];
        sum_g += tilt * s.sums.c2[i];
      }
      info << sum_e, sum_f, sum_f, sum_g;
      const Eigen::Vector2d step2 = info.ldlt().solve(grad.head<2>());
      dir << step2(0), step2(1), 0.0;
    }

    double t = 1.0;
    bool accepted = false;
    for (int half = 0; half < 50 && dir.allFinite(); ++half) {
      detail::FitState trial = s;
      trial.params.beta0 = s.params.beta0 + t * dir(0);
      trial.params.beta1 = s.params.beta1 + t * dir(1);
      trial.params.sigma2 = s.params.sigma2 * std::exp(t * dir(2));
      try {
        if (trial.params.beta1 != s.params.beta1) trial.sums.update(panel, trial.params.beta1);
        std::size_t failed = 0;
        const auto st = detail::solve_all_groups(panel, trial, opts.inner_tol, opts.max_inner_iters, &failed);
        if (st == detail::InnerStatus::Converged && trial.params.sigma2 > 0.0 &&
            std::isfinite(trial.params.sigma2)) {
          const double lb_trial = detail::state_lower_bound(panel, trial);
          if (std::isfinite(lb_trial) && lb_trial >= lb - 1e-14 * std::fabs(lb)) {
            s = std::move(trial);
            lb = lb_trial;
            accepted = true;
            break;
          }
        }
      } catch (const Error&) {
        // overflowing trial point: shrink the step
      }
      t *= 0.5;
    }

    residual = detail::sup_norm(detail::state_residuals(panel, s));
    if (opts.on_iteration) {
      VariationalParams snapshot = detail::to_fit(s, lb, iter, false, residual).variational;
      opts.on_iteration(IterationRecord{iter, s.params, &snapshot, lb});
    }
    const double rel_change = std::fabs(lb - lb_start) / std::max(1.0, std::fabs(lb));
    if (rel_change < opts.outer_tol && residual < opts.residual_tol) {
      // Finish on the closed-form variance so the fixed point holds exactly.
      // Accept only if the polished point still meets the tolerance; near
      // rounding level a further Newton step can do more harm than good.
      detail::FitState polished = s;
      polish(polished);
      const double polished_residual = detail::sup_norm(detail::state_residuals(panel, polished));
      if (polished_residual < opts.residual_tol) {
        s = std::move(polished);
        residual = polished_residual;
        converged = true;
        break;
      }
    }
    if (!accepted && rel_change == 0.0) break;  // no further progress possible
  }
  if (iter > opts.max_outer_iters) iter = opts.max_outer_iters;

  if (!converged) {
    polish(s);
    residual = detail::sup_norm(detail::state_residuals(panel, s));
  }
  lb = detail::state_lower_bound(panel, s);
  return detail::to_fit(s, lb, iter, converged, residual);
}

// GVA estimates: the (beta, sigma2) component of the joint maximizer of the bound.
inline GvaFit fit_gva(const Dataset& d, const FitOptions& opts = {}) {
  GvaFit fit = fit_gva_unchecked(d, opts);
  if (!fit.converged) {
    throw NotConvergedError("GVA fit did not converge after " + std::to_string(fit.iterations) +
                                " iterations (residual " + std::to_string(fit.residual_sup_norm) + ")",
                            std::move(fit));
  }
  return fit;
}

}  // namespace gvapois
