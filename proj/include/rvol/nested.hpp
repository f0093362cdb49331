#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <thread>
#include <vector>

#include "rvol/filter.hpp"
#include "rvol/observation.hpp"
#include "rvol/ou_bank.hpp"
#include "rvol/paths.hpp"
#include "rvol/rng.hpp"
#include "rvol/stats.hpp"

namespace rvol {

namespace detail {

// Static partition of [0, count) over workers; the work per index is uniform
// and the split is deterministic, so results never depend on thread count.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::atomic<std::size_t> next{0};
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace detail

// Jittering kernel for parameter particles: with probability refresh_prob a
// fresh uniform draw from the box, otherwise a Gaussian perturbation of scale
// scale_coeff / sqrt(K), reflected at the box boundaries.
struct JitterParams {
  double refresh_prob = 0.0;
  double scale_coeff = 0.02;
};

inline double jitter(double theta, std::size_t outer_count, const ParamBox& box, RngStream& rng,
                     const JitterParams& params = {}) {
  if (outer_count == 0) throw std::invalid_argument("jitter: need outer_count >= 1");
  if (params.refresh_prob > 0.0 && rng.uniform() < params.refresh_prob)
    return box.lo + (box.hi - box.lo) * rng.uniform();
  const double scale = params.scale_coeff / std::sqrt(static_cast<double>(outer_count));
  if (scale == 0.0) return theta;
  double t = theta + scale * rng.normal();
  while (t < box.lo || t > box.hi) {
    if (t < box.lo) t = 2.0 * box.lo - t;
    if (t > box.hi) t = 2.0 * box.hi - t;
  }
  return t;
}

// Two-layer particle ensemble: K parameter particles, each carrying an inner
// cloud of M bank states. The bank dimension J is fixed up front (the
// H-independent rule) so jittered parameters can reuse inner states.
struct ParameterCloud {
  ParamBox box;
  std::size_t outer = 0;   // K
  std::size_t inner = 0;   // M
  std::size_t bank_dim = 0;  // J, shared by all parameter particles
  std::vector<double> thetas;           // K
  std::vector<OUBankSpec> specs;        // K, regenerated whenever theta changes
  std::vector<double> states;           // K * M * J
  std::vector<double> aggregates;       // K * M
  std::vector<double> log_outer;        // K, latest log u_n^M
  std::uint64_t step_index = 0;

  std::span<double> inner_states(std::size_t k) {
    return {states.data() + k * inner * bank_dim, inner * bank_dim};
  }
  std::span<double> inner_aggregates(std::size_t k) { return {aggregates.data() + k * inner, inner}; }
};

struct NestedOptions {
  double prior_sd = 0.1;
  JitterParams jitter;
  unsigned threads = 1;
};

inline ParameterCloud init_nested(std::size_t outer, std::size_t inner, std::size_t bank_dim,
                                  const ParamBox& box, const RngStream& rng, double prior_sd) {
  if (outer == 0 || inner == 0) throw std::invalid_argument("init_nested: need K >= 1 and M >= 1");
  box.validate();
  ParameterCloud cloud;
  cloud.box = box;
  cloud.outer = outer;
  cloud.inner = inner;
  cloud.bank_dim = bank_dim;
  cloud.thetas.resize(outer);
  cloud.specs.resize(outer);
  cloud.states.resize(outer * inner * bank_dim);
  cloud.aggregates.resize(outer * inner);
  cloud.log_outer.assign(outer, 0.0);
  auto theta_rng = rng.child(0x7468u);
  for (std::size_t k = 0; k < outer; ++k) {
    cloud.thetas[k] = box.lo + (box.hi - box.lo) * theta_rng.uniform();
    cloud.specs[k] = build_bank(HurstIndex(cloud.thetas[k]), bank_dim);
    for (std::size_t m = 0; m < inner; ++m) {
      auto prng = rng.child(0x696eu, k, m);
      double* z = cloud.states.data() + (k * inner + m) * bank_dim;
      for (std::size_t j = 0; j < bank_dim; ++j) z[j] = prior_sd * prng.normal();
      cloud.aggregates[k * inner + m] = aggregate({z, bank_dim}, cloud.specs[k]);
    }
  }
  return cloud;
}

struct NestedStepResult {
  std::uint64_t clamp_events = 0;
};

// One step of the nested filter: jitter each theta, regenerate its bank,
// propagate and weight the inner cloud, average the inner weights into the
// parameter likelihood u_n^M, resample inner then outer. Outer particles are
// independent until the outer resampling barrier, and each one draws from
// substreams keyed by (step, k), so results are bit-identical for any thread
// count.
inline NestedStepResult nested_step(ParameterCloud& cloud, unsigned long y, double delta,
                                    const IntensitySpec& ispec, const RngStream& rng,
                                    const NestedOptions& opts = {}) {
  const std::size_t K = cloud.outer, M = cloud.inner, J = cloud.bank_dim;
  const std::uint64_t n = cloud.step_index + 1;
  std::atomic<std::uint64_t> clamps{0};

  detail::parallel_for(K, opts.threads, [&](std::size_t k) {
    auto jit_rng = rng.child(0x6a69u, n, k);
    cloud.thetas[k] = jitter(cloud.thetas[k], K, cloud.box, jit_rng, opts.jitter);
    cloud.specs[k] = build_bank(HurstIndex(cloud.thetas[k]), J);
    const OUBankSpec& spec = cloud.specs[k];
    const OUStepCoeffs coeffs(spec, delta);

    auto prop_rng = rng.child(0x7072u, n, k);
    std::vector<double> logw(M);
    std::uint64_t local_clamps = 0;
    double* base = cloud.states.data() + k * M * J;
    for (std::size_t m = 0; m < M; ++m) {
      const double v = prop_rng.normal();
      std::span<double> z{base + m * J, J};
      ou_step_inplace(z, coeffs, v);
      const double x = aggregate(z, spec);
      cloud.aggregates[k * M + m] = x;
      logw[m] = log_likelihood(y, intensity(x, ispec, &local_clamps), delta);
    }
    clamps += local_clamps;

    // u_n^M from the pre-resampling inner weights
    cloud.log_outer[k] = normalize_log_weights(logw);
    if (!std::isfinite(cloud.log_outer[k])) return;  // dead parameter particle; culled by the outer layer

    auto res_rng = rng.child(0x7265u, n, k);
    const auto ancestors = resample_multinomial(logw, res_rng);
    std::vector<double> next(M * J);
    std::vector<double> next_agg(M);
    for (std::size_t m = 0; m < M; ++m) {
      std::copy_n(base + ancestors[m] * J, J, next.data() + m * J);
      next_agg[m] = cloud.aggregates[k * M + ancestors[m]];
    }
    std::copy(next.begin(), next.end(), base);
    std::copy(next_agg.begin(), next_agg.end(), cloud.aggregates.begin() + k * M);
  });

  // Outer resampling barrier
  std::vector<double> outer_logw = cloud.log_outer;
  const double lse = log_sum_exp(outer_logw);
  if (!std::isfinite(lse)) {
    double lmin = std::numeric_limits<double>::infinity(), lmax = -lmin;
    throw DegeneracyError(n, y, lmin, lmax);
  }
  for (auto& w : outer_logw) w = std::exp(w - lse);
  auto outer_rng = rng.child(0x6f72u, n);
  const auto ancestors = resample_multinomial(outer_logw, outer_rng);

  std::vector<double> new_thetas(K);
  std::vector<OUBankSpec> new_specs(K);
  std::vector<double> new_states(K * M * J);
  std::vector<double> new_agg(K * M);
  for (std::size_t k = 0; k < K; ++k) {
    const std::uint32_t a = ancestors[k];
    new_thetas[k] = cloud.thetas[a];
    new_specs[k] = cloud.specs[a];
    std::copy_n(cloud.states.data() + a * M * J, M * J, new_states.data() + k * M * J);
    std::copy_n(cloud.aggregates.data() + a * M, M, new_agg.data() + k * M);
  }
  cloud.thetas = std::move(new_thetas);
  cloud.specs = std::move(new_specs);
  cloud.states = std::move(new_states);
  cloud.aggregates = std::move(new_agg);
  cloud.step_index = n;

  NestedStepResult result;
  result.clamp_events = clamps.load();
  return result;
}

struct NestedResult {
  std::vector<PosteriorSummary> summaries;
  std::vector<double> final_thetas;
  std::uint64_t clamp_events = 0;
};

// Nested particle filter: online joint state filtering and Hurst-index
// estimation. State summaries pool all K*M inner particles; the parameter
// posterior is the equally weighted atom measure on the resampled thetas.
inline NestedResult run_nested(const ObservationSeries& obs, const IntensitySpec& ispec, std::size_t outer,
                               std::size_t inner, const ParamBox& box, const RngStream& rng,
                               const NestedOptions& opts = {}) {
  NestedResult result;
  if (obs.size() == 0) {
    // No information: the parameter sample is the prior itself.
    box.validate();
    auto theta_rng = rng.child(0x7468u);
    result.final_thetas.resize(outer);
    for (auto& t : result.final_thetas) t = box.lo + (box.hi - box.lo) * theta_rng.uniform();
    return result;
  }
  const std::size_t J = bank_size(std::max<std::size_t>(obs.size(), 2));
  ParameterCloud cloud = init_nested(outer, inner, J, box, rng, opts.prior_sd);
  result.summaries.reserve(obs.size());
  for (std::size_t n = 1; n <= obs.size(); ++n) {
    const auto step = nested_step(cloud, obs.counts[n - 1], obs.delta, ispec, rng, opts);
    result.clamp_events += step.clamp_events;
    PosteriorSummary s;
    s.step = n;
    s.time = static_cast<double>(n - 1) * obs.delta;
    s.state_mean = mean(cloud.aggregates);
    s.state_q01 = quantile(cloud.aggregates, 0.01);
    s.state_q99 = quantile(cloud.aggregates, 0.99);
    s.h_mean = mean(cloud.thetas);
    s.h_q01 = quantile(cloud.thetas, 0.01);
    s.h_q99 = quantile(cloud.thetas, 0.99);
    result.summaries.push_back(s);
  }
  result.final_thetas = cloud.thetas;
  return result;
}

struct ContinuityRow {
  double delta_h = 0.0;
  double discrepancy = 0.0;
  bool skipped = false;
};

// Common-random-number continuity probe: run the bootstrap filter at H and
// at H + delta_h from the same seed and report the largest gap, over steps,
// of the posterior means of tanh(X) and exp(-X^2). At delta_h = 0 the runs
// are identical and the discrepancy is exactly zero.
inline std::vector<ContinuityRow> continuity_probe(HurstIndex h, std::span<const double> delta_hs,
                                                   const ObservationSeries& obs, const IntensitySpec& ispec,
                                                   std::size_t particles, std::uint64_t seed,
                                                   const ParamBox& box = {},
                                                   const FilterOptions& opts = {}) {
  const auto probe_means = [&](double hurst) {
    const RngStream rng(seed);
    const auto spec = build_bank(HurstIndex(hurst), bank_size(obs.size(), HurstIndex(hurst)));
    ParticleCloud cloud = init_bootstrap(spec, particles, opts.prior_sd, rng);
    std::vector<double> f1(obs.size()), f2(obs.size());
    for (std::size_t n = 1; n <= obs.size(); ++n) {
      bootstrap_step(cloud, obs.counts[n - 1], obs.delta, ispec, rng);
      double s1 = 0.0, s2 = 0.0;
      for (double x : cloud.aggregates) {
        s1 += std::tanh(x);
        s2 += std::exp(-x * x);
      }
      f1[n - 1] = s1 / static_cast<double>(particles);
      f2[n - 1] = s2 / static_cast<double>(particles);
    }
    return std::pair{f1, f2};
  };

  const auto [base1, base2] = probe_means(h.value());
  std::vector<ContinuityRow> rows;
  rows.reserve(delta_hs.size());
  for (double dh : delta_hs) {
    ContinuityRow row;
    row.delta_h = dh;
    const double shifted = h.value() + dh;
    if (!box.contains(shifted) && dh != 0.0) {
      row.skipped = true;
      rows.push_back(row);
      continue;
    }
    const auto [p1, p2] = dh == 0.0 ? std::pair{base1, base2} : probe_means(shifted);
    double d = 0.0;
    for (std::size_t n = 0; n < obs.size(); ++n) {
      d = std::max(d, std::abs(p1[n] - base1[n]));
      d = std::max(d, std::abs(p2[n] - base2[n]));
    }
    row.discrepancy = d;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace rvol
