#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace rvol {

// Dense lower-triangular Cholesky of a symmetric positive-definite matrix
// (row-major n x n). Throws std::runtime_error on a non-positive pivot.
inline std::vector<double> cholesky_lower(const std::vector<double>& a, std::size_t n) {
  if (a.size() != n * n) throw std::invalid_argument("cholesky_lower: size mismatch");
  std::vector<double> l(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= l[i * n + k] * l[j * n + k];
      if (i == j) {
        if (s <= 0.0 || !std::isfinite(s)) throw std::runtime_error("cholesky_lower: matrix not positive definite");
        l[i * n + i] = std::sqrt(s);
      } else {
        l[i * n + j] = s / l[j * n + j];
      }
    }
  }
  return l;
}

// Cholesky with escalating diagonal jitter, for nearly singular covariances.
// Tries jitter = 0, then jitter0 * 10^k up to jitter_max before giving up.
inline std::vector<double> cholesky_lower_jittered(std::vector<double> a, std::size_t n,
                                                   double jitter0 = 1e-12, double jitter_max = 1e-6,
                                                   double* used_jitter = nullptr) {
  double jitter = 0.0;
  for (;;) {
    try {
      std::vector<double> work = a;
      for (std::size_t i = 0; i < n; ++i) work[i * n + i] += jitter;
      auto l = cholesky_lower(work, n);
      if (used_jitter) *used_jitter = jitter;
      return l;
    } catch (const std::runtime_error&) {
      if (jitter == 0.0) {
        jitter = jitter0;
      } else if (jitter * 10.0 <= jitter_max) {
        jitter *= 10.0;
      } else {
        throw std::runtime_error("cholesky_lower_jittered: factorization failed even at max jitter");
      }
    }
  }
}

// y = L z for lower-triangular L (row-major n x n).
inline std::vector<double> lower_tri_matvec(const std::vector<double>& l, std::size_t n,
                                            const std::vector<double>& z) {
  if (z.size() != n) throw std::invalid_argument("lower_tri_matvec: size mismatch");
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += l[i * n + j] * z[j];
    y[i] = s;
  }
  return y;
}

}  // namespace rvol
