#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "catch_amalgamated.hpp"
#include "gvapois/coverage_study.hpp"
#include "gvapois/gva_fitter.hpp"
#include "gvapois/inference.hpp"
#include "oracles.hpp"

using namespace gvapois;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("normal quantile against frozen high-precision values") {
  struct Row {
    double p, q;
  };
  const Row rows[] = {{0.5, 0.0},
                      {0.9, 1.28155156554460046697},
                      {0.975, 1.95996398454005423552},
                      {0.99, 2.32634787404084110089},
                      {0.999999, 4.75342430882289894819},
                      {1e-10, -6.36134090240405620470},
                      {0.025, -1.95996398454005423552}};
  for (const auto& r : rows) {
    INFO("p = " << r.p);
    // The frozen values are for the decimal p; the double nearest to it can
    // move the quantile by half an ulp of p divided by the density.
    const double density = std::exp(-0.5 * r.q * r.q) / std::sqrt(2.0 * std::numbers::pi);
    const double conditioning = 0x1.0p-53 * r.p / density;
    CHECK_THAT(normal_quantile(r.p), WithinAbs(r.q, 1e-14 * std::max(1.0, std::fabs(r.q)) + conditioning));
  }
}

TEST_CASE("normal quantile against erfc bisection") {
  for (int k = 1; k < 2000; ++k) {
    const double p = k / 2000.0;
    CHECK_THAT(normal_quantile(p), WithinAbs(oracle::normal_quantile_bisect(p), 1e-12));
  }
  for (double p : {1e-300, 1e-100, 1e-20, 1e-5, 1.0 - 1e-12}) {
    CHECK_THAT(normal_quantile(p), WithinRel(oracle::normal_quantile_bisect(p), 1e-12));
  }
  CHECK(normal_quantile(0.0) == -INFINITY);
  CHECK(normal_quantile(1.0) == INFINITY);
  CHECK_THROWS_AS(normal_quantile(1.5), Error);
  CHECK_THROWS_AS(normal_quantile(NAN), Error);
}

TEST_CASE("mgf moment estimates") {
  Dataset zero;
  zero.x = RowMatrix<double>(3, 4, 0.0);
  zero.y = RowMatrix<std::int64_t>(3, 4, std::int64_t{1});
  CHECK(estimate_mgf_moments(zero, 0.7) == MgfMoments{1.0, 0.0, 0.0});

  const Dataset d = simulate_dataset({0, 0, 1}, PredictorDistribution::UniformMinus1To1, 7, 3, 2);
  double s1 = 0.0, s2 = 0.0;
  for (double xv : d.x.flat()) {
    s1 += xv;
    s2 += xv * xv;
  }
  const auto mm = estimate_mgf_moments(d, 0.0);
  CHECK(mm.phi0_hat == 1.0);
  CHECK_THAT(mm.phi1_hat, WithinAbs(s1 / 21.0, 1e-15));
  CHECK_THAT(mm.phi2_hat, WithinAbs(s2 / 21.0, 1e-15));

  Dataset big;
  big.x = sample_x(PredictorDistribution::StandardNormal, 1000, 100, 9);
  big.y = RowMatrix<std::int64_t>(1000, 100, std::int64_t{0});
  const auto mb = estimate_mgf_moments(big, 0.2);
  const double sd = std::sqrt(std::exp(0.08) - std::exp(0.04));  // Var e^{0.2X}
  CHECK(std::fabs(mb.phi0_hat - std::exp(0.02)) < 4.0 * sd / std::sqrt(1e5));
}

TEST_CASE("tau squared from the formula") {
  CHECK_THAT(tau_squared_hat(0.0, 0.0, MgfMoments{1.0, 0.0, 1.0}), WithinRel(1.0, 1e-15));
  CHECK_THAT(tau_squared_hat(0.0, 0.0, MgfMoments{1.0, 0.0, 1.0 / 3.0}), WithinRel(3.0, 1e-15));
  CHECK_THAT(tau_squared_true({0.0, 0.0, 1e-300}, PredictorDistribution::StandardNormal), WithinRel(1.0, 1e-15));
  CHECK_THAT(tau_squared_true({0.0, 0.0, 1e-300}, PredictorDistribution::UniformMinus1To1), WithinRel(3.0, 1e-14));
  // Normal predictor: tau^2 = exp(-sigma2/2 - beta0 - beta1^2/2).
  CHECK_THAT(tau_squared_true({-0.3, 0.2, 0.5}, PredictorDistribution::StandardNormal), WithinRel(std::exp(0.03), 1e-14));

  Dataset flat;
  flat.x = RowMatrix<double>(4, 5, 0.7);
  flat.y = RowMatrix<std::int64_t>(4, 5, std::int64_t{1});
  try {
    tau_squared_hat(0.0, 0.5, estimate_mgf_moments(flat, 0.3));
    FAIL("expected SingularDenominator");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SingularDenominator);
  }
}

TEST_CASE("interval half-widths") {
  const ModelParams est{-0.3, 0.2, 0.5};
  const CiSet ci = studentized_intervals(est, 1.0, 100, 10, 0.05);
  CHECK_THAT(ci.beta1_interval.length() / 2.0, WithinRel(0.0619795032304561631, 1e-13));
  CHECK_THAT(ci.sigma2_interval.length() / 2.0, WithinRel(0.138590382434967794528, 1e-13));
  CHECK_THAT(ci.beta0_interval.length() / 2.0, WithinRel(1.95996398454005423552 * std::sqrt(0.005), 1e-13));
  CHECK_THAT(ci.beta1_interval.center(), WithinAbs(0.2, 1e-15));
  CHECK(ci.tau2_hat == 1.0);
  CHECK(ci.alpha == 0.05);
}

TEST_CASE("half-widths shrink monotonically as alpha grows") {
  const ModelParams est{0.1, -0.4, 0.8};
  double prev[3] = {INFINITY, INFINITY, INFINITY};
  for (double alpha : {1e-6, 0.001, 0.01, 0.05, 0.1, 0.3, 0.5, 0.9, 0.99, 0.9999}) {
    const CiSet ci = studentized_intervals(est, 2.0, 50, 5, alpha);
    for (int k = 0; k < 3; ++k) {
      const double h = ci.interval(kAllParameters[k]).length();
      CHECK(h < prev[k]);
      prev[k] = h;
    }
  }
  for (double h : prev) CHECK(h < 1e-3);
  CHECK_THROWS_AS(two_sided_z(0.0), Error);
  CHECK_THROWS_AS(two_sided_z(1.0), Error);
}

TEST_CASE("standard errors separate the two rates") {
  const ModelParams est{0.4, 0.3, 0.7};
  const double tau2 = 1.7;
  for (std::size_t m : {50u, 100u, 400u}) {
    for (std::size_t n : {4u, 10u}) {
      const CiSet base = studentized_intervals(est, tau2, m, n, 0.05);
      const CiSet dm = studentized_intervals(est, tau2, 2 * m, n, 0.05);
      const CiSet dn = studentized_intervals(est, tau2, m, 2 * n, 0.05);
      for (Parameter p : kAllParameters) {
        CHECK_THAT(base.interval(p).length() / dm.interval(p).length(), WithinRel(std::sqrt(2.0), 1e-14));
      }
      CHECK_THAT(base.beta1_interval.length() / dn.beta1_interval.length(), WithinRel(std::sqrt(2.0), 1e-14));
      CHECK(base.beta0_interval.length() == dn.beta0_interval.length());
      CHECK(base.sigma2_interval.length() == dn.sigma2_interval.length());
    }
  }
}

TEST_CASE("Wald statistic and interval agree") {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> off(-3.0, 3.0);
  int fits = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst = oracle::random_instance(rng, 10, 20);
    GvaFit fit;
    try {
      fit = fit_gva(inst.data);
    } catch (const Error&) {
      continue;
    }
    ++fits;
    for (double alpha : {0.01, 0.05, 0.2}) {
      const CiSet ci = confidence_intervals(fit, inst.data, alpha);
      const double z = two_sided_z(alpha);
      for (Parameter p : kAllParameters) {
        const double est = parameter_value(fit.params, p);
        CHECK(wald_statistic(fit, inst.data, p, est) == 0.0);
        const Interval& iv = ci.interval(p);
        for (int k = 0; k < 20; ++k) {
          const double null = est + off(rng) * iv.length() / 2.0;
          if (std::fabs(std::fabs(null - est) - iv.length() / 2.0) < 1e-9 * iv.length()) continue;
          const double w = wald_statistic(fit, inst.data, p, null);
          CHECK((std::fabs(w) < z) == iv.contains(null));
        }
      }
    }
  }
  CHECK(fits >= 15);
}

TEST_CASE("tau squared estimate ignores cell order") {
  const Dataset d = simulate_dataset({-0.3, 0.2, 0.5}, PredictorDistribution::StandardNormal, 40, 10, 6);
  Dataset q = d;
  auto cells = q.x.flat();
  std::mt19937_64 rng(1);
  std::shuffle(cells.begin(), cells.end(), rng);
  const auto a = estimate_mgf_moments(d, 0.25);
  const auto b = estimate_mgf_moments(q, 0.25);
  CHECK_THAT(tau_squared_hat(-0.3, 0.5, b), WithinRel(tau_squared_hat(-0.3, 0.5, a), 1e-12));
}

TEST_CASE("tau squared estimate is consistent") {
  for (auto dist : {PredictorDistribution::StandardNormal, PredictorDistribution::UniformMinus1To1}) {
    const ModelParams truth{-0.3, 0.2, 0.5};
    Dataset d;
    d.x = sample_x(dist, 10000, 100, 77);
    d.y = RowMatrix<std::int64_t>(10000, 100, std::int64_t{0});
    const double est = tau_squared_hat(truth.beta0, truth.sigma2, estimate_mgf_moments(d, truth.beta1));
    CHECK_THAT(est, WithinRel(tau_squared_true(truth, dist), 0.02));
  }
}

TEST_CASE("Wald test for beta1 has roughly nominal size") {
  const ModelParams truth{-0.3, 0.2, 0.5};
  StudyConfig cfg;
  cfg.truth = truth;
  int rejected = 0, used = 0;
  for (std::int64_t r = 0; r < 500; ++r) {
    const Dataset d = simulate_dataset(truth, cfg.dist, 100, 10, replication_seed(909, 100, r));
    try {
      const GvaFit fit = fit_gva(d);
      rejected += std::fabs(wald_statistic(fit, d, Parameter::Beta1, truth.beta1)) > 1.959963984540054;
      ++used;
    } catch (const Error&) {
    }
  }
  CHECK(used >= 490);
  const double rate = static_cast<double>(rejected) / used;
  // 3 binomial sd at R = 500 around 5%.
  CHECK(rate > 0.05 - 3.0 * std::sqrt(0.05 * 0.95 / 500));
  CHECK(rate < 0.05 + 3.0 * std::sqrt(0.05 * 0.95 / 500));
}

TEST_CASE("intervals need a converged fit") {
  const Dataset d = simulate_dataset({-0.3, 0.2, 0.5}, PredictorDistribution::StandardNormal, 20, 5, 6);
  GvaFit fit = fit_gva(d);
  fit.converged = false;
  CHECK_THROWS_AS(confidence_intervals(fit, d, 0.05), Error);
  CHECK_THROWS_AS(wald_statistic(fit, d, Parameter::Beta0, 0.0), Error);
}
