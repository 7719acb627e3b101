#pragma once

// Test-only oracles, kept independent of the library code paths they check.

#include <cmath>
#include <functional>
#include <vector>

#include "diffplan/denoiser.hpp"

namespace diffplan::testing {

// Central finite difference of a scalar loss with respect to one parameter
// coordinate. The loss callable must be deterministic in the parameters.
inline double central_difference(
    DenoiserParams& params, size_t layer, bool is_bias, int i, int j,
    const std::function<double(const DenoiserParams&)>& loss, double delta) {
  double& slot = is_bias ? params.biases[layer][i] : params.weights[layer](i, j);
  double saved = slot;
  slot = saved + delta;
  double up = loss(params);
  slot = saved - delta;
  double down = loss(params);
  slot = saved;
  return (up - down) / (2.0 * delta);
}

struct GradCheckResult {
  double max_rel_err = 0;
  int checked = 0;
};

// Compares analytic gradients against central differences on `probes`
// coordinates from every parameter tensor.
inline GradCheckResult check_gradients(
    DenoiserParams& params, const GradientBundle& analytic,
    const std::function<double(const DenoiserParams&)>& loss, RngStream& rng,
    int probes = 3, double delta = 1e-5) {
  GradCheckResult res;
  for (size_t l = 0; l < params.weights.size(); ++l) {
    for (int p = 0; p < probes; ++p) {
      int i = static_cast<int>(rng.index(params.weights[l].rows()));
      int j = static_cast<int>(rng.index(params.weights[l].cols()));
      double fd = central_difference(params, l, false, i, j, loss, delta);
      double an = analytic.weights[l](i, j);
      double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      res.checked += 1;

      int bi = static_cast<int>(rng.index(params.biases[l].size()));
      fd = central_difference(params, l, true, bi, 0, loss, delta);
      an = analytic.biases[l][bi];
      rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      res.checked += 1;
    }
  }
  return res;
}

// Trapezoid quadrature of exp(logpdf) over [lo, hi].
inline double quadrature_density_mass(
    const std::function<double(double)>& logpdf, double lo, double hi, int n) {
  double h = (hi - lo) / n;
  double sum = 0.5 * (std::exp(logpdf(lo)) + std::exp(logpdf(hi)));
  for (int i = 1; i < n; ++i) sum += std::exp(logpdf(lo + i * h));
  return sum * h;
}

// Chi-squared statistic against a uniform expectation over `bins` cells.
inline double chi2_uniform(const std::vector<long>& counts, double total) {
  double expected = total / counts.size();
  double stat = 0;
  for (long c : counts) {
    double d = c - expected;
    stat += d * d / expected;
  }
  return stat;
}

}  // namespace diffplan::testing
