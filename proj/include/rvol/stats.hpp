#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace rvol {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

inline double sample_variance(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n < 2) return 0.0;
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(n - 1);
}

// Linear-interpolation quantile on a copy (R type 7). q in [0, 1].
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw std::invalid_argument("quantile: empty sample");
  if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile: q outside [0,1]");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= xs.size()) return xs.back();
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[lo + 1] - xs[lo]);
}

inline double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

// Max-shifted log(sum(exp(xs))). Returns -inf for an all -inf (or empty) input.
inline double log_sum_exp(std::span<const double> xs) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : xs) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return -std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (double x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

// In-place normalization of log weights to a probability vector.
// Returns log of the mean raw weight (the step's log evidence contribution).
inline double normalize_log_weights(std::span<double> logw) {
  const double lse = log_sum_exp(logw);
  if (!std::isfinite(lse)) return -std::numeric_limits<double>::infinity();
  double tot = 0.0;
  for (double& w : logw) {
    w = std::exp(w - lse);
    tot += w;
  }
  for (double& w : logw) w /= tot;
  return lse - std::log(static_cast<double>(logw.size()));
}

}  // namespace rvol
