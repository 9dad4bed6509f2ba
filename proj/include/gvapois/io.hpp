#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "gvapois/core_types.hpp"
#include "gvapois/coverage_study.hpp"
#include "gvapois/ghq_oracle.hpp"

#ifndef GVAPOIS_VERSION
#define GVAPOIS_VERSION "0.1.0"
#endif

namespace gvapois {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON schemas

inline void to_json(json& j, PredictorDistribution d) { j = std::string(predictor_name(d)); }
inline void from_json(const json& j, PredictorDistribution& d) { d = parse_predictor(j.get<std::string>()); }

inline void to_json(json& j, const ModelParams& p) {
  j = json{{"beta0", p.beta0}, {"beta1", p.beta1}, {"sigma2", p.sigma2}};
}
inline void from_json(const json& j, ModelParams& p) {
  j.at("beta0").get_to(p.beta0);
  j.at("beta1").get_to(p.beta1);
  j.at("sigma2").get_to(p.sigma2);
}

inline void to_json(json& j, const VariationalParams& v) { j = json{{"mu", v.mu}, {"lambda", v.lambda}}; }
inline void from_json(const json& j, VariationalParams& v) {
  j.at("mu").get_to(v.mu);
  j.at("lambda").get_to(v.lambda);
}

inline json variational_summary(const VariationalParams& v) {
  if (v.size() == 0) return json::object();
  double mu_sum = 0.0, mu_sq = 0.0, lam_min = v.lambda[0], lam_max = v.lambda[0], lam_sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    mu_sum += v.mu[i];
    mu_sq += v.mu[i] * v.mu[i];
    lam_min = std::min(lam_min, v.lambda[i]);
    lam_max = std::max(lam_max, v.lambda[i]);
    lam_sum += v.lambda[i];
  }
  const double m = static_cast<double>(v.size());
  return json{{"groups", v.size()},
              {"mu_sum", mu_sum},
              {"mu_mean_square", mu_sq / m},
              {"lambda_mean", lam_sum / m},
              {"lambda_min", lam_min},
              {"lambda_max", lam_max}};
}

// "variational_summary" is informational and ignored when reading.
inline void to_json(json& j, const GvaFit& f) {
  j = json{{"method", "gva"},
           {"params", f.params},
           {"lower_bound", f.lower_bound},
           {"iterations", f.iterations},
           {"converged", f.converged},
           {"residual_sup_norm", f.residual_sup_norm},
           {"variational_summary", variational_summary(f.variational)},
           {"variational", f.variational}};
}
inline void from_json(const json& j, GvaFit& f) {
  j.at("params").get_to(f.params);
  j.at("variational").get_to(f.variational);
  j.at("lower_bound").get_to(f.lower_bound);
  j.at("iterations").get_to(f.iterations);
  j.at("converged").get_to(f.converged);
  j.at("residual_sup_norm").get_to(f.residual_sup_norm);
}

inline void to_json(json& j, const Interval& iv) { j = json{{"lower", iv.lower}, {"upper", iv.upper}}; }
inline void from_json(const json& j, Interval& iv) {
  j.at("lower").get_to(iv.lower);
  j.at("upper").get_to(iv.upper);
}

inline void to_json(json& j, const CiSet& c) {
  j = json{{"alpha", c.alpha},
           {"beta0", c.beta0_interval},
           {"beta1", c.beta1_interval},
           {"sigma2", c.sigma2_interval},
           {"tau2_hat", c.tau2_hat ? json(*c.tau2_hat) : json(nullptr)}};
}
inline void from_json(const json& j, CiSet& c) {
  j.at("alpha").get_to(c.alpha);
  j.at("beta0").get_to(c.beta0_interval);
  j.at("beta1").get_to(c.beta1_interval);
  j.at("sigma2").get_to(c.sigma2_interval);
  const json& t = j.at("tau2_hat");
  c.tau2_hat = t.is_null() ? std::nullopt : std::optional<double>(t.get<double>());
}

inline void to_json(json& j, const ParameterCoverage& c) {
  j = json{{"cover_count", c.cover_count}, {"coverage_pct", c.coverage_pct}, {"mean_length", c.mean_length}};
}
inline void from_json(const json& j, ParameterCoverage& c) {
  j.at("cover_count").get_to(c.cover_count);
  j.at("coverage_pct").get_to(c.coverage_pct);
  j.at("mean_length").get_to(c.mean_length);
}

inline void to_json(json& j, const CoverageReport& r) {
  j = json{{"config",
            {{"truth", r.truth},
             {"dist", r.dist},
             {"m", r.m},
             {"n", r.n},
             {"alpha", r.alpha},
             {"replications", r.replications},
             {"seed", r.seed}}},
           {"beta0", r.beta0},
           {"beta1", r.beta1},
           {"sigma2", r.sigma2},
           {"failures", r.failures}};
}
inline void from_json(const json& j, CoverageReport& r) {
  const json& c = j.at("config");
  c.at("truth").get_to(r.truth);
  c.at("dist").get_to(r.dist);
  c.at("m").get_to(r.m);
  c.at("n").get_to(r.n);
  c.at("alpha").get_to(r.alpha);
  c.at("replications").get_to(r.replications);
  c.at("seed").get_to(r.seed);
  j.at("beta0").get_to(r.beta0);
  j.at("beta1").get_to(r.beta1);
  j.at("sigma2").get_to(r.sigma2);
  j.at("failures").get_to(r.failures);
}

// "n" is either an integer (fixed n) or the string "m/10".
inline void to_json(json& j, const StudyConfig& c) {
  j = json{{"truth", c.truth},
           {"dist", c.dist},
           {"m_values", c.m_values},
           {"n", c.fixed_n ? json(*c.fixed_n) : json("m/10")},
           {"alpha", c.alpha},
           {"replications", c.replications},
           {"seed", c.seed},
           {"compare_exact", c.compare_exact},
           {"nodes", c.nodes}};
}
inline void from_json(const json& j, StudyConfig& c) {
  c = StudyConfig{};
  j.at("truth").get_to(c.truth);
  if (j.contains("dist")) j.at("dist").get_to(c.dist);
  if (j.contains("m_values")) j.at("m_values").get_to(c.m_values);
  if (j.contains("n")) {
    const json& n = j.at("n");
    if (n.is_string()) {
      if (n.get<std::string>() != "m/10") throw Error(ErrorCode::ParseError, "n must be an integer or \"m/10\"");
      c.fixed_n.reset();
    } else {
      c.fixed_n = n.get<std::size_t>();
    }
  }
  if (j.contains("alpha")) j.at("alpha").get_to(c.alpha);
  if (j.contains("replications")) j.at("replications").get_to(c.replications);
  if (j.contains("seed")) j.at("seed").get_to(c.seed);
  if (j.contains("compare_exact")) j.at("compare_exact").get_to(c.compare_exact);
  if (j.contains("nodes")) j.at("nodes").get_to(c.nodes);
}

inline void to_json(json& j, const LengthRatioSummary& s) {
  j = json{{"median_ratio", s.median_ratio}, {"fraction_shorter", s.fraction_shorter}};
}
inline void from_json(const json& j, LengthRatioSummary& s) {
  j.at("median_ratio").get_to(s.median_ratio);
  j.at("fraction_shorter").get_to(s.fraction_shorter);
}

inline void to_json(json& j, const LengthComparison& c) {
  j = json{{"m", c.m},         {"n", c.n},         {"replications", c.replications}, {"failures", c.failures},
           {"beta0", c.beta0}, {"beta1", c.beta1}, {"sigma2", c.sigma2}};
}
inline void from_json(const json& j, LengthComparison& c) {
  j.at("m").get_to(c.m);
  j.at("n").get_to(c.n);
  j.at("replications").get_to(c.replications);
  j.at("failures").get_to(c.failures);
  j.at("beta0").get_to(c.beta0);
  j.at("beta1").get_to(c.beta1);
  j.at("sigma2").get_to(c.sigma2);
}

inline void to_json(json& j, const MleFit& f) {
  json info = json::array();
  for (int r = 0; r < 3; ++r) info.push_back({f.information(r, 0), f.information(r, 1), f.information(r, 2)});
  j = json{{"method", "mle"},
           {"params", f.params},
           {"loglik", f.loglik},
           {"information", info},
           {"information_coordinates", {"beta0", "beta1", "log_sigma2"}},
           {"gradient_sup_norm", f.gradient_sup_norm},
           {"iterations", f.iterations},
           {"nodes", f.nodes}};
}
inline void from_json(const json& j, MleFit& f) {
  j.at("params").get_to(f.params);
  j.at("loglik").get_to(f.loglik);
  const json& info = j.at("information");
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) f.information(r, c) = info.at(r).at(c).get<double>();
  j.at("gradient_sup_norm").get_to(f.gradient_sup_norm);
  j.at("iterations").get_to(f.iterations);
  j.at("nodes").get_to(f.nodes);
}

// 64-bit FNV-1a of a canonical JSON dump, printed as hex.
inline std::string config_hash(const json& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : config.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// Provenance block embedded in every output file. `seed` is null for
// commands that draw no random numbers.
inline json output_metadata(std::optional<std::uint64_t> seed, const json& config, const json& nodes = nullptr) {
  json meta{{"version", GVAPOIS_VERSION}, {"config_hash", config_hash(config)}};
  meta["seed"] = seed ? json(*seed) : json(nullptr);
  meta["nodes"] = nodes;
  return meta;
}

// ---------------------------------------------------------------------------
// Dataset CSV: header "group_id,x,y", n consecutive rows per group, groups 0..m-1.

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_dataset_csv(std::ostream& os, const Dataset& d) {
  os << "group_id,x,y\n";
  for (std::size_t i = 0; i < d.m(); ++i) {
    for (std::size_t j = 0; j < d.n(); ++j) os << i << ',' << format_double(d.x(i, j)) << ',' << d.y(i, j) << '\n';
  }
}

namespace detail {

template <typename T>
T parse_field(std::string_view field, std::size_t line) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
  T value{};
  const auto res = std::from_chars(field.data(), field.data() + field.size(), value);
  if (res.ec != std::errc{} || res.ptr != field.data() + field.size()) {
    throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": cannot parse '" + std::string(field) + "'");
  }
  return value;
}

}  // namespace detail

inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorCode::ParseError, "empty dataset file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "group_id,x,y") throw Error(ErrorCode::ParseError, "expected header 'group_id,x,y', got '" + line + "'");

  std::vector<double> xs;
  std::vector<std::int64_t> ys;
  std::vector<std::size_t> group_sizes;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::string_view sv(line);
    const auto c1 = sv.find(',');
    const auto c2 = c1 == std::string_view::npos ? c1 : sv.find(',', c1 + 1);
    if (c2 == std::string_view::npos || sv.find(',', c2 + 1) != std::string_view::npos) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": expected 3 fields");
    }
    const auto group = detail::parse_field<std::size_t>(sv.substr(0, c1), line_no);
    const auto x = detail::parse_field<double>(sv.substr(c1 + 1, c2 - c1 - 1), line_no);
    const auto y = detail::parse_field<std::int64_t>(sv.substr(c2 + 1), line_no);
    if (group == group_sizes.size()) {
      group_sizes.push_back(0);
    } else if (group_sizes.empty() || group != group_sizes.size() - 1) {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": group_id must run 0..m-1 in order, got " + std::to_string(group));
    }
    ++group_sizes.back();
    xs.push_back(x);
    ys.push_back(y);
  }
  if (group_sizes.empty()) throw Error(ErrorCode::ParseError, "dataset has no rows");
  const std::size_t n = group_sizes.front();
  for (std::size_t i = 0; i < group_sizes.size(); ++i) {
    if (group_sizes[i] != n) {
      throw Error(ErrorCode::ShapeMismatch, "group " + std::to_string(i) + " has " + std::to_string(group_sizes[i]) +
                                                " rows, group 0 has " + std::to_string(n));
    }
  }
  Dataset d;
  d.x = RowMatrix<double>(group_sizes.size(), n, std::move(xs));
  d.y = RowMatrix<std::int64_t>(group_sizes.size(), n, std::move(ys));
  validate_dataset(d);
  return d;
}

inline Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_dataset_csv(in);
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

// Converts a JSON value, mapping schema errors to ParseError.
template <typename T>
T json_as(const json& j, std::string_view what) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string(what) + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Tidy CSV, one row per cell x parameter.

inline void write_coverage_csv(std::ostream& os, const std::vector<CoverageReport>& reports) {
  os << "dist,beta0_true,beta1_true,sigma2_true,m,n,alpha,parameter,replications,failures,cover_count,coverage_pct,"
        "mean_length\n";
  for (const auto& r : reports) {
    for (Parameter p : kAllParameters) {
      const auto& c = r.coverage(p);
      os << predictor_name(r.dist) << ',' << format_double(r.truth.beta0) << ',' << format_double(r.truth.beta1) << ','
         << format_double(r.truth.sigma2) << ',' << r.m << ',' << r.n << ',' << format_double(r.alpha) << ','
         << parameter_name(p) << ',' << r.replications << ',' << r.failures << ',' << c.cover_count << ','
         << format_double(c.coverage_pct) << ',' << format_double(c.mean_length) << '\n';
    }
  }
}

inline void write_length_csv(std::ostream& os, const std::vector<LengthComparison>& rows) {
  os << "m,n,parameter,replications,failures,median_ratio,fraction_shorter\n";
  for (const auto& r : rows) {
    for (Parameter p : kAllParameters) {
      const auto& s = r.summary(p);
      os << r.m << ',' << r.n << ',' << parameter_name(p) << ',' << r.replications << ',' << r.failures << ','
         << format_double(s.median_ratio) << ',' << format_double(s.fraction_shorter) << '\n';
    }
  }
}

}  // namespace gvapois
