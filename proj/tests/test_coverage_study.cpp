#include <cmath>
#include <set>
#include <sstream>

#include "catch_amalgamated.hpp"
#include "gvapois/coverage_study.hpp"
#include "gvapois/io.hpp"

using namespace gvapois;

namespace {

StudyConfig small_config() {
  StudyConfig cfg;
  cfg.m_values = {30, 60};
  cfg.replications = 25;
  cfg.seed = 77;
  return cfg;
}

CiSet make_ci(Interval b0, Interval b1, Interval s2) {
  CiSet ci;
  ci.beta0_interval = b0;
  ci.beta1_interval = b1;
  ci.sigma2_interval = s2;
  return ci;
}

}  // namespace

TEST_CASE("coverage runs are deterministic") {
  const StudyConfig cfg = small_config();
  const auto a = run_coverage(cfg);
  const auto b = run_coverage(cfg);
  CHECK(a == b);
  CHECK(json(a).dump() == json(b).dump());
  std::ostringstream ca, cb;
  write_coverage_csv(ca, a);
  write_coverage_csv(cb, b);
  CHECK(ca.str() == cb.str());

  StudyConfig other = cfg;
  other.seed = 78;
  CHECK(!(run_coverage(other) == a));
}

TEST_CASE("coverage does not depend on the thread count") {
  const StudyConfig cfg = small_config();
  const auto serial = run_coverage(cfg, 1);
  CHECK(run_coverage(cfg, 3) == serial);
  CHECK(run_coverage(cfg, 8) == serial);
}

TEST_CASE("a single replication covers or misses") {
  StudyConfig cfg = small_config();
  cfg.replications = 1;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    for (const auto& rep : run_coverage(cfg)) {
      CHECK(rep.replications == 1);
      for (Parameter p : kAllParameters) {
        const double pct = rep.coverage(p).coverage_pct;
        CHECK((pct == 0.0 || pct == 100.0));
      }
    }
  }
}

TEST_CASE("aggregation counts containment and excludes failures") {
  StudyConfig cfg;
  cfg.truth = {0.0, 1.0, 2.0};
  std::vector<std::optional<CiSet>> outcomes;
  outcomes.push_back(make_ci({-1, 1}, {0, 2}, {1, 3}));     // covers all
  outcomes.push_back(make_ci({0.5, 1}, {0, 2}, {2.5, 3}));  // covers beta1 only
  outcomes.push_back(std::nullopt);
  outcomes.push_back(make_ci({-2, 0}, {1, 1}, {0, 2}));  // closed intervals: all covered
  const auto rep = aggregate_coverage(cfg, 40, outcomes);
  CHECK(rep.replications == 4);
  CHECK(rep.failures == 1);
  CHECK(rep.beta0.cover_count == 2);
  CHECK(rep.beta1.cover_count == 3);
  CHECK(rep.sigma2.cover_count == 2);
  CHECK(rep.beta0.coverage_pct == Catch::Approx(200.0 / 3.0));
  CHECK(rep.beta1.coverage_pct == 100.0);
  CHECK(rep.beta0.mean_length == Catch::Approx((2.0 + 0.5 + 2.0) / 3.0));
  CHECK(rep.beta1.mean_length == Catch::Approx(4.0 / 3.0));
  CHECK(rep.n == 4);
}

TEST_CASE("length ratios of identical intervals are one") {
  std::vector<std::optional<CiPair>> pairs;
  for (int r = 0; r < 7; ++r) {
    const CiSet ci = make_ci({-1.0 - r, 1.0}, {0.0, 0.1 * (r + 1)}, {0.5, 0.9});
    pairs.push_back(CiPair{ci, ci});
  }
  pairs.push_back(std::nullopt);
  const auto s = summarize_length_ratios(100, 10, pairs);
  CHECK(s.replications == 8);
  CHECK(s.failures == 1);
  for (Parameter p : kAllParameters) {
    CHECK(s.summary(p).median_ratio == 1.0);
    CHECK(s.summary(p).fraction_shorter == 0.0);
  }
}

TEST_CASE("median") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(std::isnan(median({})));
}

TEST_CASE("exact comparison yields positive finite ratios") {
  StudyConfig cfg = small_config();
  cfg.m_values = {50};
  cfg.replications = 6;
  CHECK_THROWS_AS(compare_lengths(cfg), Error);
  cfg.compare_exact = true;
  for (std::int64_t r = 0; r < cfg.replications; ++r) {
    const auto pair = length_replication(cfg, 50, r);
    if (!pair) continue;
    for (Parameter p : kAllParameters) {
      const double ratio = pair->gva.interval(p).length() / pair->exact.interval(p).length();
      CHECK(ratio > 0.0);
      CHECK(std::isfinite(ratio));
    }
  }
  const auto rows = compare_lengths(cfg);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].replications == 6);
  CHECK(rows[0].failures == 0);
  CHECK(compare_lengths(cfg, 4) == rows);
}

TEST_CASE("config validation") {
  auto code = [](StudyConfig cfg) {
    try {
      validate_config(cfg);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  StudyConfig cfg;
  CHECK(code(cfg) == ErrorCode::IoError);
  cfg.replications = 0;
  CHECK(code(cfg) == ErrorCode::InvalidArgument);
  cfg = {};
  cfg.m_values = {1};
  CHECK(code(cfg) == ErrorCode::InvalidArgument);
  cfg = {};
  cfg.m_values = {5};  // m / 10 == 0
  CHECK(code(cfg) == ErrorCode::InvalidArgument);
  cfg.fixed_n = 3;
  CHECK(code(cfg) == ErrorCode::IoError);
  cfg.alpha = 1.0;
  CHECK(code(cfg) == ErrorCode::InvalidArgument);
}

TEST_CASE("replication seeds are distinct") {
  std::set<std::uint64_t> seen;
  for (std::size_t m : {100u, 200u, 400u})
    for (std::int64_t r = 0; r < 1000; ++r) seen.insert(replication_seed(1, m, r));
  CHECK(seen.size() == 3000);
}

TEST_CASE("fitter failures stay rare on the reference grid") {
  for (const auto& truth : kReferenceTruthVectors) {
    StudyConfig cfg;
    cfg.truth = truth;
    cfg.replications = 500;
    cfg.seed = 3;
    for (const auto& rep : run_coverage(cfg, default_threads())) {
      INFO("truth (" << truth.beta0 << ", " << truth.beta1 << ", " << truth.sigma2 << ") m=" << rep.m);
      CHECK(static_cast<double>(rep.failures) / rep.replications < 0.02);
    }
  }
}

TEST_CASE("small-variance intercept coverage falls short at m = 100") {
  StudyConfig cfg;
  cfg.truth = kReferenceTruthVectors[4];
  cfg.m_values = {100};
  const auto rep = run_coverage(cfg, default_threads()).front();
  CHECK(rep.beta0.coverage_pct < 92.0);
}
