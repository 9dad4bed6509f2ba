#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "gvapois/core_types.hpp"
#include "gvapois/predictors.hpp"
#include "gvapois/rng.hpp"

namespace gvapois {

struct SimulateOptions {
  double rate_cap = 1e12;  // largest admissible Poisson mean
};

// Draws (X, U, Y) from Y_ij | X_ij, U_i ~ Poisson(exp(beta0 + beta1 X_ij + U_i)),
// U_i ~ N(0, sigma2). Each cell uses streams keyed by (seed, i, j).
inline Dataset simulate_dataset(const ModelParams& truth, PredictorDistribution dist, std::size_t m,
                                std::size_t n, std::uint64_t seed, SimulateOptions opts = {}) {
  validate_params(truth);
  if (m < 1 || n < 1) throw Error(ErrorCode::InvalidArgument, "simulate_dataset requires m, n >= 1");

  Dataset d;
  d.x = sample_x(dist, m, n, seed);
  d.y = RowMatrix<std::int64_t>(m, n);
  std::vector<double> u(m);
  const double sd = std::sqrt(truth.sigma2);
  for (std::size_t i = 0; i < m; ++i) {
    CellRng urng(seed, StreamTag::Latent, i);
    u[i] = sd * urng.normal();
    for (std::size_t j = 0; j < n; ++j) {
      const double rate = std::exp(truth.beta0 + truth.beta1 * d.x(i, j) + u[i]);
      if (!(rate <= opts.rate_cap)) {
        throw Error(ErrorCode::RateOverflow, "Poisson mean " + std::to_string(rate) + " at cell (" +
                                                 std::to_string(i) + "," + std::to_string(j) +
                                                 ") exceeds cap");
      }
      CellRng yrng(seed, StreamTag::Response, i, j);
      d.y(i, j) = poisson_draw(rate, yrng);
    }
  }
  d.u_latent = std::move(u);
  return d;
}

}  // namespace gvapois
