#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gvapois/coverage_study.hpp"
#include "gvapois/ghq_oracle.hpp"
#include "gvapois/gva_fitter.hpp"
#include "gvapois/inference.hpp"
#include "gvapois/io.hpp"
#include "gvapois/simulate.hpp"

namespace gvapois::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kNumerical = 2 };

inline void print_error(std::ostream& err, std::string_view name, std::string_view message) {
  err << json{{"error", name}, {"message", message}}.dump() << '\n';
}

// Input-side problems are usage errors; everything else is numerical.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::ParseError:
    case ErrorCode::IoError: return kUsage;
    default: return kNumerical;
  }
}

namespace detail {

// Writes to `path`, or to `fallback` when path is "-".
inline void write_text(const std::string& path, std::ostream& fallback, const std::string& text) {
  if (path == "-") {
    fallback << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  f << text;
}

inline std::string sibling_path(const std::string& path, const std::string& ext) {
  return std::filesystem::path(path).replace_extension(ext).string();
}

inline std::string fit_csv(const GvaFit& f) {
  std::ostringstream os;
  os << "method,beta0,beta1,sigma2,objective,iterations,converged,residual_sup_norm\n"
     << "gva," << format_double(f.params.beta0) << ',' << format_double(f.params.beta1) << ','
     << format_double(f.params.sigma2) << ',' << format_double(f.lower_bound) << ',' << f.iterations << ','
     << (f.converged ? "true" : "false") << ',' << format_double(f.residual_sup_norm) << '\n';
  return os.str();
}

inline std::string fit_csv(const MleFit& f) {
  std::ostringstream os;
  os << "method,beta0,beta1,sigma2,objective,iterations,converged,residual_sup_norm\n"
     << "mle," << format_double(f.params.beta0) << ',' << format_double(f.params.beta1) << ','
     << format_double(f.params.sigma2) << ',' << format_double(f.loglik) << ',' << f.iterations << ",true,"
     << format_double(f.gradient_sup_norm) << '\n';
  return os.str();
}

inline std::string ci_table(const CiSet& ci, const ModelParams& est) {
  std::ostringstream os;
  os << std::setprecision(6) << std::fixed;
  os << "parameter    estimate        lower        upper   (" << std::defaultfloat << 100.0 * (1.0 - ci.alpha)
     << "% CI)\n" << std::fixed;
  for (Parameter p : kAllParameters) {
    const Interval& iv = ci.interval(p);
    os << std::left << std::setw(9) << parameter_name(p) << std::right << std::setw(12) << parameter_value(est, p)
       << ' ' << std::setw(12) << iv.lower << ' ' << std::setw(12) << iv.upper << '\n';
  }
  if (ci.tau2_hat) os << "tau2_hat = " << *ci.tau2_hat << '\n';
  return os.str();
}

inline std::string ci_csv(const CiSet& ci, const ModelParams& est) {
  std::ostringstream os;
  os << "parameter,estimate,lower,upper,alpha\n";
  for (Parameter p : kAllParameters) {
    const Interval& iv = ci.interval(p);
    os << parameter_name(p) << ',' << format_double(parameter_value(est, p)) << ',' << format_double(iv.lower) << ','
       << format_double(iv.upper) << ',' << format_double(ci.alpha) << '\n';
  }
  return os.str();
}

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
};

inline Check selftest_gradient() {
  const Dataset d = simulate_dataset({0.4, -0.3, 0.7}, PredictorDistribution::StandardNormal, 6, 5, 11);
  VariationalParams v;
  for (std::size_t i = 0; i < d.m(); ++i) {
    v.mu.push_back(0.1 * static_cast<double>(i) - 0.2);
    v.lambda.push_back(0.2 + 0.05 * static_cast<double>(i));
  }
  const ModelParams p{0.3, -0.2, 0.8};
  const auto grad = lower_bound_gradient(p, v, d);
  double worst = 0.0;
  const std::size_t m = d.m();
  for (std::size_t k = 0; k < grad.size(); ++k) {
    auto eval = [&](double delta) {
      ModelParams q = p;
      VariationalParams w = v;
      if (k == 0) q.beta0 += delta;
      else if (k == 1) q.beta1 += delta;
      else if (k == 2) q.sigma2 *= std::exp(delta);
      else if (k < 3 + m) w.mu[k - 3] += delta;
      else w.lambda[k - 3 - m] *= std::exp(delta);
      return lower_bound(q, w, d);
    };
    const double h = 1e-6;
    const double fd = (eval(h) - eval(-h)) / (2.0 * h);
    worst = std::max(worst, std::fabs(fd - grad[k]) / std::max(1.0, std::fabs(grad[k])));
  }
  return {"gradient", worst < 1e-6, "max relative error " + format_double(worst)};
}

inline Check selftest_jensen() {
  const Dataset d = simulate_dataset({-0.3, 0.2, 0.5}, PredictorDistribution::StandardNormal, 12, 8, 5);
  const GvaFit fit = fit_gva(d);
  const double exact = exact_loglik(fit.params, d, 80);
  const double gap = exact - fit.lower_bound;
  return {"jensen", gap > -1e-6, "exact - bound = " + format_double(gap)};
}

inline Check selftest_coverage() {
  StudyConfig cfg;
  cfg.m_values = {100};
  cfg.replications = 40;
  cfg.seed = 2024;
  const auto rep = run_coverage(cfg, 1).front();
  const bool ok = rep.failures == 0 && rep.beta1.coverage_pct >= 80.0;
  return {"coverage_cell", ok,
          "m=100 n=10 R=40 beta1 coverage " + format_double(rep.beta1.coverage_pct) + "%, failures " +
              std::to_string(rep.failures)};
}

}  // namespace detail

// Entry point for the `gvapois` command line tool.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Gaussian variational inference for the Poisson random-intercept model", "gvapois"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(GVAPOIS_VERSION));

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate a dataset; writes CSV plus a JSON sidecar");
  std::size_t sim_m = 0, sim_n = 0;
  ModelParams sim_truth;
  std::string sim_dist = "normal";
  std::uint64_t sim_seed = 1;
  std::string sim_out = "dataset.csv";
  sim->add_option("--m", sim_m, "number of groups")->required()->check(CLI::PositiveNumber);
  sim->add_option("--n", sim_n, "observations per group")->required()->check(CLI::PositiveNumber);
  sim->add_option("--beta0", sim_truth.beta0)->required();
  sim->add_option("--beta1", sim_truth.beta1)->required();
  sim->add_option("--sigma2", sim_truth.sigma2)->required();
  sim->add_option("--dist", sim_dist, "predictor distribution")->check(CLI::IsMember({"normal", "uniform"}));
  sim->add_option("--seed", sim_seed);
  sim->add_option("--out", sim_out, "CSV path ('-' for stdout, no sidecar)");

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a dataset by GVA or exact maximum likelihood");
  std::string fit_data, fit_out = "-", fit_method = "gva", fit_format = "json";
  int fit_nodes = kDefaultGhqNodes;
  fit->add_option("--data", fit_data, "dataset CSV")->required();
  fit->add_option("--method", fit_method)->check(CLI::IsMember({"gva", "mle"}));
  fit->add_option("--nodes", fit_nodes, "Gauss-Hermite nodes for --method=mle")->check(CLI::Range(5, 400));
  fit->add_option("--out", fit_out);
  fit->add_option("--format", fit_format)->check(CLI::IsMember({"json", "csv"}));

  // ci
  auto* ci = app.add_subcommand("ci", "Confidence intervals from a fit");
  std::string ci_fit, ci_data, ci_out = "-", ci_format = "json";
  double ci_alpha = 0.05;
  ci->add_option("--fit", ci_fit, "fit JSON written by `fit`")->required();
  ci->add_option("--data", ci_data, "dataset CSV the fit was computed on")->required();
  ci->add_option("--alpha", ci_alpha)->check(CLI::Range(0.0, 1.0));
  ci->add_option("--out", ci_out);
  ci->add_option("--format", ci_format)->check(CLI::IsMember({"json", "csv"}));

  // coverage / compare share their options
  struct StudyArgs {
    std::string config;
    std::string out = "-";
    std::string csv;
    std::optional<std::uint64_t> seed;
    unsigned threads = default_threads();
  };
  StudyArgs cov_args, cmp_args;
  auto add_study_options = [](CLI::App* sub, StudyArgs& a) {
    sub->add_option("--config", a.config, "StudyConfig JSON")->required();
    sub->add_option("--out", a.out, "report JSON ('-' for stdout)");
    sub->add_option("--csv", a.csv, "tidy CSV path (default: next to --out)");
    sub->add_option("--seed", a.seed, "overrides the config seed");
    sub->add_option("--threads", a.threads)->check(CLI::PositiveNumber);
  };
  auto* cov = app.add_subcommand("coverage", "Monte-Carlo coverage of the GVA intervals");
  add_study_options(cov, cov_args);
  auto* cmp = app.add_subcommand("compare", "GVA versus exact-likelihood interval lengths");
  add_study_options(cmp, cmp_args);

  auto* self = app.add_subcommand("selftest", "Gradient, Jensen and coverage smoke checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << GVAPOIS_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    print_error(err, "UsageError", e.what());
    err << app.help();
    return kUsage;
  }

  try {
    if (*sim) {
      const auto dist = parse_predictor(sim_dist);
      const Dataset d = simulate_dataset(sim_truth, dist, sim_m, sim_n, sim_seed);
      std::ostringstream csv;
      write_dataset_csv(csv, d);
      detail::write_text(sim_out, out, csv.str());
      if (sim_out != "-") {
        json cfg{{"truth", sim_truth}, {"distribution", dist}, {"m", sim_m}, {"n", sim_n}};
        json side = cfg;
        side["seed"] = sim_seed;
        side["u_latent"] = *d.u_latent;
        side["metadata"] = output_metadata(sim_seed, cfg);
        detail::write_text(detail::sibling_path(sim_out, ".json"), out, side.dump(2) + "\n");
      }
      return kOk;
    }

    if (*fit) {
      const Dataset d = read_dataset_csv(fit_data);
      json cfg{{"method", fit_method}, {"data", fit_data}};
      if (fit_method == "gva") {
        const GvaFit f = fit_gva(d);
        if (fit_format == "csv") {
          detail::write_text(fit_out, out, detail::fit_csv(f));
        } else {
          json j = f;
          j["metadata"] = output_metadata(std::nullopt, cfg);
          detail::write_text(fit_out, out, j.dump(2) + "\n");
        }
      } else {
        cfg["nodes"] = fit_nodes;
        const MleFit f = fit_mle(d, fit_nodes);
        if (fit_format == "csv") {
          detail::write_text(fit_out, out, detail::fit_csv(f));
        } else {
          json j = f;
          j["metadata"] = output_metadata(std::nullopt, cfg, json{{"ghq", fit_nodes}});
          detail::write_text(fit_out, out, j.dump(2) + "\n");
        }
      }
      return kOk;
    }

    if (*ci) {
      const Dataset d = read_dataset_csv(ci_data);
      const json fj = read_json_file(ci_fit);
      CiSet set;
      ModelParams est;
      if (fj.value("method", "gva") == "mle") {
        const auto mf = json_as<MleFit>(fj, ci_fit);
        set = exact_ci(mf, ci_alpha);
        est = mf.params;
      } else {
        const auto gf = json_as<GvaFit>(fj, ci_fit);
        if (gf.variational.size() != d.m()) {
          throw Error(ErrorCode::ShapeMismatch, "fit has " + std::to_string(gf.variational.size()) +
                                                    " groups, dataset has " + std::to_string(d.m()));
        }
        set = confidence_intervals(gf, d, ci_alpha);
        est = gf.params;
      }
      if (ci_format == "csv") {
        detail::write_text(ci_out, out, detail::ci_csv(set, est));
      } else {
        json j = set;
        j["estimate"] = est;
        j["metadata"] = output_metadata(std::nullopt, json{{"fit", ci_fit}, {"data", ci_data}, {"alpha", ci_alpha}});
        detail::write_text(ci_out, out, j.dump(2) + "\n");
      }
      (ci_out == "-" ? err : out) << detail::ci_table(set, est);
      return kOk;
    }

    if (*cov || *cmp) {
      const bool is_cov = static_cast<bool>(*cov);
      const StudyArgs& a = is_cov ? cov_args : cmp_args;
      auto cfg = json_as<StudyConfig>(read_json_file(a.config), a.config);
      if (a.seed) cfg.seed = *a.seed;
      if (!is_cov) cfg.compare_exact = true;
      const json cfg_json = cfg;
      json report{{"config", cfg_json}};
      std::ostringstream csv;
      if (is_cov) {
        const auto cells = run_coverage(cfg, a.threads);
        report["metadata"] = output_metadata(cfg.seed, cfg_json);
        report["cells"] = cells;
        write_coverage_csv(csv, cells);
      } else {
        const auto cells = compare_lengths(cfg, a.threads);
        report["metadata"] = output_metadata(cfg.seed, cfg_json, json{{"ghq", cfg.nodes}});
        report["cells"] = cells;
        write_length_csv(csv, cells);
      }
      detail::write_text(a.out, out, report.dump(2) + "\n");
      std::string csv_path = a.csv;
      if (csv_path.empty() && a.out != "-") csv_path = detail::sibling_path(a.out, ".csv");
      if (!csv_path.empty()) detail::write_text(csv_path, out, csv.str());
      return kOk;
    }

    if (*self) {
      bool all = true;
      for (auto check : {&detail::selftest_gradient, &detail::selftest_jensen, &detail::selftest_coverage}) {
        detail::Check c;
        try {
          c = check();
        } catch (const Error& e) {
          c.passed = false;
          c.detail = std::string(e.name()) + ": " + e.what();
        }
        all = all && c.passed;
        out << (c.passed ? "PASS " : "FAIL ") << c.name << "  " << c.detail << '\n';
      }
      return all ? kOk : kNumerical;
    }
  } catch (const Error& e) {
    print_error(err, e.name(), e.what());
    return exit_code_for(e.code());
  }
  return kUsage;
}

}  // namespace gvapois::cli
