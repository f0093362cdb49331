#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "rvol/integrate.hpp"

namespace rvol {

// Compact parameter box for the Hurst index, strictly inside (0, 1/2).
struct ParamBox {
  double lo = 0.01;
  double hi = 0.49;

  bool contains(double h) const { return h >= lo && h <= hi; }
  void validate() const {
    if (!(0.0 < lo && lo < hi && hi < 0.5))
      throw std::domain_error("ParamBox: need 0 < lo < hi < 1/2");
  }
};

// Hurst index of a rough (H < 1/2) fractional / Liouville Brownian motion.
class HurstIndex {
 public:
  explicit HurstIndex(double value) : value_(value) {
    if (!(value > 0.0 && value < 0.5))
      throw std::domain_error("HurstIndex: value must lie in (0, 1/2)");
  }
  double value() const { return value_; }

 private:
  double value_;
};

// Geometric partition xi_0 < xi_1 < ... < xi_J of the mean-reversion axis.
struct Partition {
  std::vector<double> edges;  // J + 1 edges, strictly increasing, all > 0
  double ratio = 0.0;         // edges[j] / edges[j-1]
  std::size_t cells = 0;      // J
  bool small_j = false;       // J <= 16: usable, but below the intended regime
};

// Coefficients c_j and mean-reversion speeds kappa_j of the finite
// OU-superposition approximating V^H (or W^H with the history term).
struct OUBankSpec {
  double hurst = 0.0;
  std::vector<double> coeffs;
  std::vector<double> speeds;

  std::size_t size() const { return coeffs.size(); }
};

// Normalizing constant of the Mandelbrot-Van Ness kernel for H < 1/2.
// Numerator and the sine factor are both negative on (0, 1/2), so the
// quotient under the root is positive.
inline double mvn_constant(HurstIndex h) {
  const double H = h.value();
  const double num = M_PI * H * (2.0 * H - 1.0);
  const double den = std::tgamma(2.0 - 2.0 * H) * std::pow(std::tgamma(H + 0.5), 2) *
                     std::sin(M_PI * (H - 0.5));
  return std::sqrt(num / den);
}

// Number of OU components for a grid of n_steps. With an H the exponent is
// log(1 + H); without it a fixed log(1.25), so the dimension does not depend
// on the parameter being estimated.
inline std::size_t bank_size(std::size_t n_steps, std::optional<HurstIndex> h = std::nullopt) {
  if (n_steps < 2) throw std::domain_error("bank_size: need n_steps >= 2");
  const double zeta = h ? std::log(1.0 + h->value()) : std::log(1.25);
  const double n = static_cast<double>(n_steps);
  return static_cast<std::size_t>(std::floor(2.0 * std::pow(n, zeta) * std::log(n)));
}

// Geometric partition of [J^(-2a), J^(4-2a)], a = H + 1/2, with ratio J^(4/J).
inline Partition build_partition(HurstIndex h, std::size_t cells) {
  if (cells == 0) throw std::domain_error("build_partition: need at least one cell");
  const double J = static_cast<double>(cells);
  const double alpha = h.value() + 0.5;
  Partition p;
  p.cells = cells;
  p.small_j = cells <= 16;
  p.ratio = std::pow(J, 4.0 / J);
  const double xi0 = std::pow(J, -2.0 * alpha);
  p.edges.resize(cells + 1);
  for (std::size_t j = 0; j <= cells; ++j) p.edges[j] = xi0 * std::pow(p.ratio, static_cast<double>(j));
  return p;
}

// Cell masses and cell means of mu(dx) = c_H x^(-H-1/2) / Gamma(1/2-H) dx.
// The integrand is a power law, so both moments have closed forms.
inline OUBankSpec quadrature(HurstIndex h, const Partition& p) {
  if (p.edges.size() != p.cells + 1 || p.cells == 0)
    throw std::invalid_argument("quadrature: malformed partition");
  for (std::size_t j = 0; j + 1 < p.edges.size(); ++j)
    if (!(p.edges[j] > 0.0 && p.edges[j] < p.edges[j + 1]))
      throw std::invalid_argument("quadrature: edges must be positive and strictly increasing");

  const double H = h.value();
  const double scale = mvn_constant(h) / std::tgamma(0.5 - H);
  const double e1 = 0.5 - H;
  const double e2 = 1.5 - H;

  OUBankSpec spec;
  spec.hurst = H;
  spec.coeffs.resize(p.cells);
  spec.speeds.resize(p.cells);
  for (std::size_t j = 0; j < p.cells; ++j) {
    const double lo = p.edges[j], hi = p.edges[j + 1];
    const double mass = scale * (std::pow(hi, e1) - std::pow(lo, e1)) / e1;
    const double first = scale * (std::pow(hi, e2) - std::pow(lo, e2)) / e2;
    spec.coeffs[j] = mass;
    spec.speeds[j] = first / mass;
  }
  return spec;
}

inline OUBankSpec build_bank(HurstIndex h, std::size_t cells) {
  return quadrature(h, build_partition(h, cells));
}

// Cov(X_s, X_t) of the bank process X = sum_j c_j Z^j with one shared
// driving Brownian motion. All exponents kept nonpositive to avoid overflow.
inline double approx_covariance(double s, double t, const OUBankSpec& spec) {
  if (s < 0.0 || t < 0.0) throw std::domain_error("approx_covariance: negative time");
  if (s == 0.0 || t == 0.0) return 0.0;
  const double m = std::min(s, t);
  const std::size_t J = spec.size();
  double tot = 0.0;
  for (std::size_t i = 0; i < J; ++i) {
    const double ki = spec.speeds[i];
    const double ci = spec.coeffs[i];
    for (std::size_t j = 0; j < J; ++j) {
      const double kj = spec.speeds[j];
      const double overlap = std::exp(-ki * (t - m) - kj * (s - m)) - std::exp(-ki * t - kj * s);
      tot += ci * spec.coeffs[j] * overlap / (ki + kj);
    }
  }
  return tot;
}

// Exact covariance of Liouville Brownian motion,
//   c_H^2 int_0^(s^t) (t-u)^(H-1/2) (s-u)^(H-1/2) du.
// The integrable endpoint singularity is removed by substituting
// p = (min(s,t) - u)^(H+1/2), after which the integrand is smooth.
inline double liouville_covariance(double s, double t, HurstIndex h, double tol = 1e-12) {
  if (s < 0.0 || t < 0.0) throw std::domain_error("liouville_covariance: negative time");
  if (s == 0.0 || t == 0.0) return 0.0;
  const double H = h.value();
  const double ch = mvn_constant(h);
  if (s == t) return ch * ch * std::pow(t, 2.0 * H) / (2.0 * H);
  const double m = std::min(s, t), M = std::max(s, t);
  const double a = H + 0.5;
  const double gap = M - m;
  const auto integrand = [&](double p) { return std::pow(gap + std::pow(p, 1.0 / a), a - 1.0); };
  const double integral = adaptive_simpson(integrand, 0.0, std::pow(m, a), tol) / a;
  return ch * ch * integral;
}

// Autocovariance of fractional Brownian motion, (|t|^2H + |s|^2H - |t-s|^2H)/2.
// Valid on the whole H range (0, 1); at H = 1/2 it reduces to min(s, t).
inline double fbm_covariance(double s, double t, double hurst) {
  if (!(hurst > 0.0 && hurst < 1.0)) throw std::domain_error("fbm_covariance: H must be in (0, 1)");
  const double h2 = 2.0 * hurst;
  return 0.5 * (std::pow(std::abs(t), h2) + std::pow(std::abs(s), h2) - std::pow(std::abs(t - s), h2));
}

}  // namespace rvol
