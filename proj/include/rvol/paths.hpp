#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rvol/linalg.hpp"
#include "rvol/ou_bank.hpp"
#include "rvol/rng.hpp"

namespace rvol {

// Uniform time grid t_n = n * delta, n = 0..steps.
struct GridSpec {
  std::size_t steps = 0;
  double delta = 0.0;

  double horizon() const { return static_cast<double>(steps) * delta; }
  void validate() const {
    if (steps == 0 || !(delta > 0.0)) throw std::invalid_argument("GridSpec: need steps >= 1 and delta > 0");
  }
};

// Values of the J bank components at one discrete time.
struct OUBankState {
  std::vector<double> values;
  std::size_t step_index = 0;
};

// A scalar state trajectory on the grid; values[0] is the initial value.
struct StatePath {
  GridSpec grid;
  std::vector<double> values;  // grid.steps + 1 entries
};

// Mean-reversion / variance-rate parameters of the two-factor OU-OU model.
struct OUOUParams {
  double beta = 2.5;
  double sigma_r2 = 0.625;
  double kappa = 210.0;
  double sigma_v2 = 20.0;

  void validate() const {
    if (!(beta > 0.0 && kappa > 0.0 && sigma_r2 >= 0.0 && sigma_v2 >= 0.0))
      throw std::invalid_argument("OUOUParams: mean reversions must be positive, variance rates nonnegative");
  }
};

// Per-step decay and noise scale of the exact OU transition
//   Z' = Z e^(-kappa d) + sqrt((1 - e^(-2 kappa d)) / (2 kappa)) v.
// Valid for any step size; no Euler stability constraint.
struct OUStepCoeffs {
  std::vector<double> decay;
  std::vector<double> scale;

  OUStepCoeffs() = default;
  OUStepCoeffs(const OUBankSpec& spec, double delta) {
    if (!(delta > 0.0)) throw std::domain_error("OUStepCoeffs: delta must be positive");
    const std::size_t J = spec.size();
    decay.resize(J);
    scale.resize(J);
    for (std::size_t j = 0; j < J; ++j) {
      const double k = spec.speeds[j];
      decay[j] = std::exp(-k * delta);
      scale[j] = std::sqrt(-std::expm1(-2.0 * k * delta) / (2.0 * k));
    }
  }
};

// In-place update of one bank with a single shared standard normal draw.
inline void ou_step_inplace(std::span<double> values, const OUStepCoeffs& c, double v) {
  const std::size_t J = values.size();
  if (c.decay.size() != J) throw std::invalid_argument("ou_step_inplace: dimension mismatch");
  for (std::size_t j = 0; j < J; ++j) values[j] = values[j] * c.decay[j] + c.scale[j] * v;
}

inline OUBankState ou_step(const OUBankState& state, const OUBankSpec& spec, double delta, double v) {
  if (state.values.size() != spec.size()) throw std::invalid_argument("ou_step: state/spec dimension mismatch");
  OUBankState next = state;
  ou_step_inplace(next.values, OUStepCoeffs(spec, delta), v);
  next.step_index = state.step_index + 1;
  return next;
}

// X = sum_j c_j Z^j
inline double aggregate(std::span<const double> values, const OUBankSpec& spec) {
  if (values.size() != spec.size()) throw std::invalid_argument("aggregate: dimension mismatch");
  double s = 0.0;
  for (std::size_t j = 0; j < spec.size(); ++j) s += spec.coeffs[j] * values[j];
  return s;
}

inline double aggregate(const OUBankState& state, const OUBankSpec& spec) {
  return aggregate(std::span<const double>(state.values), spec);
}

// Draw of the history vector Q_0: centered Gaussian with covariance
// 1/(kappa_i + kappa_j). The matrix is Cauchy-like and badly conditioned
// for large banks; factorization falls back to escalating diagonal jitter.
inline std::vector<double> sample_q0(const OUBankSpec& spec, RngStream& rng) {
  const std::size_t J = spec.size();
  std::vector<double> cov(J * J);
  for (std::size_t i = 0; i < J; ++i)
    for (std::size_t j = 0; j < J; ++j) cov[i * J + j] = 1.0 / (spec.speeds[i] + spec.speeds[j]);
  const auto l = cholesky_lower_jittered(std::move(cov), J);
  std::vector<double> z(J);
  for (auto& x : z) x = rng.normal();
  return lower_tri_matvec(l, J, z);
}

// Liouville Brownian motion approximation: bank started at zero, exact
// shared-noise updates, path value = aggregated bank. The bank trajectory is
// returned as well so downstream filter error metrics have a ground truth.
inline std::pair<StatePath, std::vector<OUBankState>> simulate_liouville(const OUBankSpec& spec,
                                                                         const GridSpec& grid,
                                                                         RngStream& rng) {
  grid.validate();
  const std::size_t J = spec.size();
  const OUStepCoeffs coeffs(spec, grid.delta);
  StatePath path;
  path.grid = grid;
  path.values.assign(grid.steps + 1, 0.0);
  std::vector<OUBankState> bank(grid.steps + 1);
  bank[0].values.assign(J, 0.0);
  bank[0].step_index = 0;
  std::vector<double> z(J, 0.0);
  for (std::size_t n = 1; n <= grid.steps; ++n) {
    ou_step_inplace(z, coeffs, rng.normal());
    path.values[n] = aggregate(z, spec);
    bank[n].values = z;
    bank[n].step_index = n;
  }
  return {std::move(path), std::move(bank)};
}

// Fractional Brownian motion approximation: the Liouville part plus the
// (e^(-kappa t) - 1) Q_0 history correction, with the history vector given.
inline StatePath simulate_fbm_with_history(const OUBankSpec& spec, const GridSpec& grid,
                                           std::span<const double> q0, RngStream& rng) {
  grid.validate();
  const std::size_t J = spec.size();
  if (q0.size() != J) throw std::invalid_argument("simulate_fbm_with_history: history dimension mismatch");
  const OUStepCoeffs coeffs(spec, grid.delta);
  StatePath path;
  path.grid = grid;
  path.values.assign(grid.steps + 1, 0.0);
  std::vector<double> z(J, 0.0);
  std::vector<double> decay_pow(J, 1.0);  // e^(-kappa_j t_n), accumulated per step
  for (std::size_t n = 1; n <= grid.steps; ++n) {
    ou_step_inplace(z, coeffs, rng.normal());
    double x = 0.0;
    for (std::size_t j = 0; j < J; ++j) {
      decay_pow[j] *= coeffs.decay[j];
      x += spec.coeffs[j] * (z[j] + (decay_pow[j] - 1.0) * q0[j]);
    }
    path.values[n] = x;
  }
  return path;
}

inline StatePath simulate_fbm(const OUBankSpec& spec, const GridSpec& grid, RngStream& rng) {
  auto q0_rng = rng.child(0x7130u);
  const auto q0 = sample_q0(spec, q0_rng);
  auto step_rng = rng.child(0x7374u);
  return simulate_fbm_with_history(spec, grid, q0, step_rng);
}

enum class ReferenceKind { Fbm, Liouville };

// Exact Gaussian path via Cholesky of the full grid covariance matrix.
// O(N^3) factorization, guarded; meant as a small-N oracle, not a simulator.
inline StatePath cholesky_reference_path(double hurst, ReferenceKind kind, const GridSpec& grid,
                                         RngStream& rng) {
  grid.validate();
  const std::size_t N = grid.steps;
  if (N > 5000) throw std::domain_error("cholesky_reference_path: grid too large to factor (N > 5000)");
  std::vector<double> cov(N * N);
  if (kind == ReferenceKind::Fbm) {
    if (!(hurst > 0.0 && hurst < 1.0)) throw std::domain_error("cholesky_reference_path: fBM needs H in (0,1)");
  } else {
    (void)HurstIndex(hurst);  // Liouville covariance requires H in (0, 1/2)
  }
  for (std::size_t i = 0; i < N; ++i) {
    const double ti = static_cast<double>(i + 1) * grid.delta;
    for (std::size_t j = 0; j <= i; ++j) {
      const double tj = static_cast<double>(j + 1) * grid.delta;
      const double c = kind == ReferenceKind::Fbm ? fbm_covariance(ti, tj, hurst)
                                                  : liouville_covariance(ti, tj, HurstIndex(hurst));
      cov[i * N + j] = c;
      cov[j * N + i] = c;
    }
  }
  const auto l = cholesky_lower_jittered(std::move(cov), N);
  std::vector<double> z(N);
  for (auto& x : z) x = rng.normal();
  const auto y = lower_tri_matvec(l, N, z);
  StatePath path;
  path.grid = grid;
  path.values.assign(N + 1, 0.0);
  for (std::size_t i = 0; i < N; ++i) path.values[i + 1] = y[i];
  return path;
}

// Standard Brownian motion on the grid (consumers square it for the |W|^2
// intensity model).
inline StatePath simulate_abs_bm(const GridSpec& grid, RngStream& rng) {
  grid.validate();
  StatePath path;
  path.grid = grid;
  path.values.assign(grid.steps + 1, 0.0);
  const double s = std::sqrt(grid.delta);
  for (std::size_t n = 1; n <= grid.steps; ++n) path.values[n] = path.values[n - 1] + s * rng.normal();
  return path;
}

// OU-OU model: R stepped exactly, V by the exact conditional solution with R
// frozen at its left endpoint over each step. Both start at zero. Freezing R
// is what keeps the scheme stable at kappa * delta near 1, where Euler fails.
inline StatePath simulate_ou_ou(const OUOUParams& params, const GridSpec& grid, RngStream& rng) {
  params.validate();
  grid.validate();
  StatePath path;
  path.grid = grid;
  path.values.assign(grid.steps + 1, 0.0);
  const double d = grid.delta;
  const double r_decay = std::exp(-params.beta * d);
  const double r_scale = std::sqrt(params.sigma_r2 * -std::expm1(-2.0 * params.beta * d) / (2.0 * params.beta));
  const double v_decay = std::exp(-params.kappa * d);
  const double v_scale = std::sqrt(params.sigma_v2 * -std::expm1(-2.0 * params.kappa * d) / (2.0 * params.kappa));
  double r = 0.0, v = 0.0;
  for (std::size_t n = 1; n <= grid.steps; ++n) {
    const double r_next = r * r_decay + r_scale * rng.normal();
    v = r + (v - r) * v_decay + v_scale * rng.normal();
    r = r_next;
    path.values[n] = v;
  }
  return path;
}

}  // namespace rvol
