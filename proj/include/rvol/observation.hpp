#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "rvol/paths.hpp"
#include "rvol/rng.hpp"

namespace rvol {

enum class IntensityKind { Exp, Square };

// Map from hidden state to Cox-process intensity. Exp: b * e^x; Square: b * x^2.
struct IntensitySpec {
  IntensityKind kind = IntensityKind::Exp;
  double b = 8000.0;
  double exp_clamp = 1e12;  // ceiling on e^x; deep excursions must not poison weights
};

inline double intensity(double x, const IntensitySpec& spec, std::uint64_t* clamp_count = nullptr) {
  if (!std::isfinite(x)) throw std::domain_error("intensity: non-finite state");
  if (spec.kind == IntensityKind::Square) return spec.b * x * x;
  double e = std::exp(x);
  if (e > spec.exp_clamp) {
    e = spec.exp_clamp;
    if (clamp_count) ++*clamp_count;
  }
  return spec.b * e;
}

// Per-bin jump counts y_n on the observation grid.
struct ObservationSeries {
  double delta = 0.0;
  std::vector<unsigned long> counts;
  unsigned long total = 0;

  std::size_t size() const { return counts.size(); }
};

// Counts with mean intensity(X_(n-1)) * delta: the intensity is frozen at the
// left endpoint of each bin. One derived substream per bin, so perturbing the
// state at a later grid point cannot disturb earlier bins' draws.
inline ObservationSeries sample_counts(const StatePath& path, const IntensitySpec& spec, const RngStream& rng) {
  ObservationSeries obs;
  obs.delta = path.grid.delta;
  obs.counts.resize(path.grid.steps);
  for (std::size_t n = 1; n <= path.grid.steps; ++n) {
    const double mean = intensity(path.values[n - 1], spec) * path.grid.delta;
    auto bin_rng = rng.child(0x6269u, n);
    obs.counts[n - 1] = mean > 0.0 ? bin_rng.poisson(mean) : 0ul;
  }
  obs.total = std::accumulate(obs.counts.begin(), obs.counts.end(), 0ul);
  return obs;
}

// Compound-Poisson price path. Jumps are the symmetric two-point law +/- sigma:
// zero mean, variance sigma^2, bounded.
struct PricePath {
  double s0 = 0.0;
  double sigma2 = 0.0;
  std::vector<double> jumps;
  std::vector<double> prices;  // per-bin cumulative series, prices[0] = s0
};

inline PricePath sample_price_path(const ObservationSeries& counts, double sigma2, RngStream& rng,
                                   double s0 = 0.0) {
  if (!(sigma2 > 0.0)) throw std::domain_error("sample_price_path: sigma2 must be positive");
  PricePath p;
  p.s0 = s0;
  p.sigma2 = sigma2;
  p.jumps.reserve(counts.total);
  p.prices.resize(counts.size() + 1);
  p.prices[0] = s0;
  const double sigma = std::sqrt(sigma2);
  double level = s0;
  for (std::size_t n = 0; n < counts.size(); ++n) {
    for (unsigned long i = 0; i < counts.counts[n]; ++i) {
      const double jump = rng.uniform() < 0.5 ? sigma : -sigma;
      p.jumps.push_back(jump);
      level += jump;
    }
    p.prices[n + 1] = level;
  }
  return p;
}

// Poisson log pmf: y log(lambda delta) - lambda delta - log(y!).
inline double log_likelihood(unsigned long y, double lambda, double delta) {
  const double mean = lambda * delta;
  if (mean < 0.0 || !std::isfinite(mean)) throw std::domain_error("log_likelihood: invalid mean");
  if (mean == 0.0) return y == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  return static_cast<double>(y) * std::log(mean) - mean - std::lgamma(static_cast<double>(y) + 1.0);
}

// One row of the diffusion-limit check: realized quadratic variation of the
// price path against the integrated variance sum_n sigma^2 lambda_(n-1) delta
// (left-endpoint rectangles, matching the piecewise-constant intensity).
struct DiffusionLimitRow {
  double b = 0.0;
  double sigma2 = 0.0;
  double quadratic_variation = 0.0;
  double integrated_variance = 0.0;
  double rel_gap = 0.0;
};

// For each b, sigma^2 = sigma_bar2 / b keeps sigma^2 * lambda invariant, so
// the diffusion limit is approached along the sequence. Caller aggregates
// rows over seeds and checks the gap trend.
inline std::vector<DiffusionLimitRow> diffusion_limit_report(HurstIndex h, std::span<const double> b_list,
                                                             const GridSpec& grid, double sigma_bar2,
                                                             const RngStream& rng) {
  grid.validate();
  if (!(sigma_bar2 > 0.0)) throw std::domain_error("diffusion_limit_report: sigma_bar2 must be positive");
  std::vector<DiffusionLimitRow> rows;
  rows.reserve(b_list.size());
  const auto spec = build_bank(h, bank_size(grid.steps, h));
  for (std::size_t i = 0; i < b_list.size(); ++i) {
    const double b = b_list[i];
    if (!(b > 0.0)) throw std::domain_error("diffusion_limit_report: b must be positive");
    auto path_rng = rng.child(0x7061u, i);
    const auto [path, bank] = simulate_liouville(spec, grid, path_rng);
    const IntensitySpec ispec{IntensityKind::Exp, b};
    auto count_rng = rng.child(0x636fu, i);
    const auto obs = sample_counts(path, ispec, count_rng);
    const double sigma2 = sigma_bar2 / b;
    auto price_rng = rng.child(0x7072u, i);
    const auto price = sample_price_path(obs, sigma2, price_rng);

    DiffusionLimitRow row;
    row.b = b;
    row.sigma2 = sigma2;
    for (double j : price.jumps) row.quadratic_variation += j * j;
    for (std::size_t n = 1; n <= grid.steps; ++n)
      row.integrated_variance += sigma2 * intensity(path.values[n - 1], ispec) * grid.delta;
    row.rel_gap = row.integrated_variance > 0.0
                      ? std::abs(row.quadratic_variation - row.integrated_variance) / row.integrated_variance
                      : 0.0;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rvol
