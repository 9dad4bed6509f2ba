#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "gvapois/core_types.hpp"
#include "gvapois/ghq_oracle.hpp"
#include "gvapois/gva_fitter.hpp"
#include "gvapois/inference.hpp"
#include "gvapois/rng.hpp"
#include "gvapois/simulate.hpp"

namespace gvapois {

struct StudyConfig {
  ModelParams truth{-0.3, 0.2, 0.5};
  PredictorDistribution dist = PredictorDistribution::StandardNormal;
  std::vector<std::size_t> m_values{100, 200, 400};
  std::optional<std::size_t> fixed_n;  // absent: n = m / 10
  double alpha = 0.05;
  std::int64_t replications = 500;
  std::uint64_t seed = 1;
  bool compare_exact = false;
  int nodes = kDefaultGhqNodes;

  std::size_t n_for(std::size_t m) const { return fixed_n ? *fixed_n : m / 10; }
  bool operator==(const StudyConfig&) const = default;
};

// Default truth grid for simulation studies.
inline constexpr ModelParams kReferenceTruthVectors[] = {
    {-0.3, 0.2, 0.5}, {2.2, -0.1, 0.16}, {1.2, 0.4, 0.1}, {0.02, 1.3, 1.0}, {-0.3, 0.2, 0.1}};

inline void validate_config(const StudyConfig& cfg) {
  validate_params(cfg.truth);
  if (cfg.replications < 1) throw Error(ErrorCode::InvalidArgument, "replications must be >= 1");
  if (cfg.m_values.empty()) throw Error(ErrorCode::InvalidArgument, "m_values is empty");
  for (std::size_t m : cfg.m_values) {
    if (m < 2) throw Error(ErrorCode::InvalidArgument, "every m must be >= 2");
    if (cfg.n_for(m) < 1) {
      throw Error(ErrorCode::InvalidArgument, "derived n is zero for m = " + std::to_string(m));
    }
  }
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw Error(ErrorCode::InvalidArgument, "alpha must lie in (0, 1)");
  if (cfg.nodes < 5) throw Error(ErrorCode::InvalidArgument, "nodes must be >= 5");
}

// Seed of replication r in the cell with m groups.
inline std::uint64_t replication_seed(std::uint64_t seed, std::size_t m, std::int64_t r) {
  return mix_key(seed, static_cast<std::uint64_t>(StreamTag::Replication), m, static_cast<std::uint64_t>(r));
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

namespace detail {

// Runs body(r) for r in [0, count) on up to `threads` workers. Results must be
// written to slot r so aggregation never depends on scheduling.
template <typename Body>
void parallel_for(std::int64_t count, unsigned threads, Body&& body) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::int64_t>(count, 1))));
  if (threads == 1) {
    for (std::int64_t r = 0; r < count; ++r) body(r);
    return;
  }
  std::atomic<std::int64_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::int64_t r = next++; r < count; r = next++) body(r);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

// One simulated replication: simulate, fit, build intervals. Numerical
// failures come back as nullopt.
inline std::optional<CiSet> gva_replication(const StudyConfig& cfg, std::size_t m, std::int64_t r,
                                            const FitOptions& fit_opts = {}) {
  const std::size_t n = cfg.n_for(m);
  try {
    const Dataset d = simulate_dataset(cfg.truth, cfg.dist, m, n, replication_seed(cfg.seed, m, r));
    const GvaFit fit = fit_gva(d, fit_opts);
    return confidence_intervals(fit, d, cfg.alpha);
  } catch (const Error&) {
    return std::nullopt;
  }
}

inline CoverageReport aggregate_coverage(const StudyConfig& cfg, std::size_t m,
                                         const std::vector<std::optional<CiSet>>& outcomes) {
  CoverageReport rep;
  rep.truth = cfg.truth;
  rep.dist = cfg.dist;
  rep.m = m;
  rep.n = cfg.n_for(m);
  rep.alpha = cfg.alpha;
  rep.replications = static_cast<std::int64_t>(outcomes.size());
  rep.seed = cfg.seed;
  double length_sum[3] = {0.0, 0.0, 0.0};
  for (const auto& o : outcomes) {
    if (!o) {
      ++rep.failures;
      continue;
    }
    for (int k = 0; k < 3; ++k) {
      const Parameter which = kAllParameters[k];
      const Interval& iv = o->interval(which);
      if (iv.contains(parameter_value(cfg.truth, which))) ++rep.coverage(which).cover_count;
      length_sum[k] += iv.length();
    }
  }
  const std::int64_t used = rep.replications - rep.failures;
  for (int k = 0; k < 3; ++k) {
    auto& c = rep.coverage(kAllParameters[k]);
    c.coverage_pct = used > 0 ? 100.0 * static_cast<double>(c.cover_count) / static_cast<double>(used) : 0.0;
    c.mean_length = used > 0 ? length_sum[k] / static_cast<double>(used) : 0.0;
  }
  return rep;
}

// Coverage of the studentized GVA intervals, one report per m.
inline std::vector<CoverageReport> run_coverage(const StudyConfig& cfg, unsigned threads = 1) {
  validate_config(cfg);
  std::vector<CoverageReport> reports;
  for (std::size_t m : cfg.m_values) {
    std::vector<std::optional<CiSet>> outcomes(static_cast<std::size_t>(cfg.replications));
    detail::parallel_for(cfg.replications, threads,
                         [&](std::int64_t r) { outcomes[static_cast<std::size_t>(r)] = gva_replication(cfg, m, r); });
    reports.push_back(aggregate_coverage(cfg, m, outcomes));
  }
  return reports;
}

struct LengthRatioSummary {
  double median_ratio = 0.0;
  double fraction_shorter = 0.0;  // share of replications with GVA length < exact length

  bool operator==(const LengthRatioSummary&) const = default;
};

struct LengthComparison {
  std::size_t m = 0;
  std::size_t n = 0;
  std::int64_t replications = 0;
  std::int64_t failures = 0;
  LengthRatioSummary beta0, beta1, sigma2;

  const LengthRatioSummary& summary(Parameter which) const noexcept {
    switch (which) {
      case Parameter::Beta0: return beta0;
      case Parameter::Beta1: return beta1;
      default: return sigma2;
    }
  }
  LengthRatioSummary& summary(Parameter which) noexcept {
    switch (which) {
      case Parameter::Beta0: return beta0;
      case Parameter::Beta1: return beta1;
      default: return sigma2;
    }
  }
  bool operator==(const LengthComparison&) const = default;
};

struct CiPair {
  CiSet gva;
  CiSet exact;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

// Median GVA/exact length ratio over the successful replications.
inline LengthComparison summarize_length_ratios(std::size_t m, std::size_t n,
                                                const std::vector<std::optional<CiPair>>& pairs) {
  LengthComparison out;
  out.m = m;
  out.n = n;
  out.replications = static_cast<std::int64_t>(pairs.size());
  std::vector<double> ratios[3];
  for (const auto& p : pairs) {
    if (!p) {
      ++out.failures;
      continue;
    }
    for (int k = 0; k < 3; ++k) {
      const Parameter which = kAllParameters[k];
      ratios[k].push_back(p->gva.interval(which).length() / p->exact.interval(which).length());
    }
  }
  for (int k = 0; k < 3; ++k) {
    auto& s = out.summary(kAllParameters[k]);
    s.median_ratio = median(ratios[k]);
    const auto shorter = std::count_if(ratios[k].begin(), ratios[k].end(), [](double r) { return r < 1.0; });
    s.fraction_shorter = ratios[k].empty() ? 0.0 : static_cast<double>(shorter) / static_cast<double>(ratios[k].size());
  }
  return out;
}

inline std::optional<CiPair> length_replication(const StudyConfig& cfg, std::size_t m, std::int64_t r) {
  const std::size_t n = cfg.n_for(m);
  try {
    const Dataset d = simulate_dataset(cfg.truth, cfg.dist, m, n, replication_seed(cfg.seed, m, r));
    const GvaFit fit = fit_gva(d);
    CiPair pair;
    pair.gva = confidence_intervals(fit, d, cfg.alpha);
    FitOptions opts;
    opts.init = std::make_pair(fit.params, fit.variational);
    const MleFit mle = fit_mle(d, cfg.nodes, opts);
    pair.exact = exact_ci(mle, cfg.alpha);
    for (Parameter which : kAllParameters) {
      const double a = pair.gva.interval(which).length();
      const double b = pair.exact.interval(which).length();
      if (!(a > 0.0 && b > 0.0 && std::isfinite(a) && std::isfinite(b))) return std::nullopt;
    }
    return pair;
  } catch (const Error&) {
    return std::nullopt;
  }
}

// GVA versus likelihood-based interval lengths, one summary per m.
inline std::vector<LengthComparison> compare_lengths(const StudyConfig& cfg, unsigned threads = 1) {
  validate_config(cfg);
  if (!cfg.compare_exact) {
    throw Error(ErrorCode::InvalidArgument, "compare_lengths requires compare_exact = true");
  }
  std::vector<LengthComparison> out;
  for (std::size_t m : cfg.m_values) {
    std::vector<std::optional<CiPair>> pairs(static_cast<std::size_t>(cfg.replications));
    detail::parallel_for(cfg.replications, threads,
                         [&](std::int64_t r) { pairs[static_cast<std::size_t>(r)] = length_replication(cfg, m, r); });
    out.push_back(summarize_length_ratios(m, cfg.n_for(m), pairs));
  }
  return out;
}

}  // namespace gvapois
