#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rvol/observation.hpp"
#include "rvol/ou_bank.hpp"
#include "rvol/paths.hpp"
#include "rvol/rng.hpp"
#include "rvol/stats.hpp"

namespace rvol {

// All particle weights collapsed to zero: a sign of a mis-specified b or an
// intensity overflow, never silently reset.
class DegeneracyError : public std::runtime_error {
 public:
  DegeneracyError(std::uint64_t step, unsigned long y, double lambda_min, double lambda_max)
      : std::runtime_error(format(step, y, lambda_min, lambda_max)), step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  static std::string format(std::uint64_t step, unsigned long y, double lmin, double lmax) {
    std::ostringstream os;
    os << "particle filter degenerate at step " << step << " (y = " << y << ", lambda range ["
       << lmin << ", " << lmax << "])";
    return os.str();
  }
  std::uint64_t step_;
};

// Weighted ensemble of bank states, stored flat (particles x J, row-major).
struct ParticleCloud {
  OUBankSpec spec;
  std::size_t particles = 0;
  std::vector<double> states;      // particles * spec.size()
  std::vector<double> aggregates;  // cached X = sum c_j Z^j per particle
  std::vector<double> weights;     // normalized
  std::uint64_t step_index = 0;

  std::span<double> state(std::size_t m) { return {states.data() + m * spec.size(), spec.size()}; }
  std::span<const double> state(std::size_t m) const {
    return {states.data() + m * spec.size(), spec.size()};
  }
};

// M i.i.d. categorical draws from a normalized weight vector, via inverse CDF.
inline std::vector<std::uint32_t> resample_multinomial(std::span<const double> weights, RngStream& rng) {
  const std::size_t m = weights.size();
  if (m == 0) throw std::invalid_argument("resample_multinomial: empty weights");
  std::vector<double> cumulative(m);
  double acc = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double w = weights[i];
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("resample_multinomial: invalid weight");
    acc += w;
    cumulative[i] = acc;
  }
  if (!(acc > 0.0)) throw std::invalid_argument("resample_multinomial: weights sum to zero");
  std::vector<std::uint32_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    idx[i] = static_cast<std::uint32_t>(std::min<std::ptrdiff_t>(it - cumulative.begin(),
                                                                 static_cast<std::ptrdiff_t>(m) - 1));
  }
  return idx;
}

// Recorded (or injected) randomness of one filter step, used by the
// brute-force evidence oracle and the exchangeability checks.
struct StepRandomness {
  std::vector<double> propagation;      // one shared normal per particle
  std::vector<std::uint32_t> ancestors; // resampled indices
};

struct BootstrapStepResult {
  double log_evidence = 0.0;
  std::uint64_t clamp_events = 0;
};

// M states drawn i.i.d. componentwise N(0, prior_sd^2), uniform weights.
// Each particle owns a derived substream.
inline ParticleCloud init_bootstrap(const OUBankSpec& spec, std::size_t particles, double prior_sd,
                                    const RngStream& rng) {
  if (particles == 0) throw std::invalid_argument("init_bootstrap: need at least one particle");
  if (prior_sd < 0.0) throw std::invalid_argument("init_bootstrap: prior_sd must be nonnegative");
  ParticleCloud cloud;
  cloud.spec = spec;
  cloud.particles = particles;
  const std::size_t J = spec.size();
  cloud.states.resize(particles * J);
  cloud.aggregates.resize(particles);
  cloud.weights.assign(particles, 1.0 / static_cast<double>(particles));
  for (std::size_t m = 0; m < particles; ++m) {
    auto prng = rng.child(0x696eu, m);
    auto s = cloud.state(m);
    for (auto& z : s) z = prior_sd * prng.normal();
    cloud.aggregates[m] = aggregate(s, spec);
  }
  return cloud;
}

namespace detail {

// Shared core of one bootstrap update (propagate, weight, resample).
// rand == nullptr: draw everything. record: draw and fill rand. replay:
// consume rand instead of drawing.
inline BootstrapStepResult bootstrap_step_impl(ParticleCloud& cloud, unsigned long y, double delta,
                                               const IntensitySpec& ispec, const RngStream& rng,
                                               StepRandomness* rand, bool replay,
                                               std::vector<double>* scratch_logw = nullptr) {
  const std::size_t M = cloud.particles;
  const std::size_t J = cloud.spec.size();
  if (cloud.states.size() != M * J) throw std::invalid_argument("bootstrap_step: state/spec dimension mismatch");
  const OUStepCoeffs coeffs(cloud.spec, delta);
  const std::uint64_t n = cloud.step_index + 1;

  BootstrapStepResult result;
  if (rand && !replay) {
    rand->propagation.resize(M);
    rand->ancestors.clear();
  }
  if (replay && (!rand || rand->propagation.size() != M || rand->ancestors.size() != M))
    throw std::invalid_argument("bootstrap_step: replay randomness has wrong shape");

  auto prop_rng = rng.child(0x7072u, n);
  std::vector<double> local_logw;
  std::vector<double>& logw = scratch_logw ? *scratch_logw : local_logw;
  logw.resize(M);
  double lambda_min = std::numeric_limits<double>::infinity();
  double lambda_max = -std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; m < M; ++m) {
    const double v = replay ? rand->propagation[m] : prop_rng.normal();
    if (rand && !replay) rand->propagation[m] = v;
    auto s = cloud.state(m);
    ou_step_inplace(s, coeffs, v);
    const double x = aggregate(s, cloud.spec);
    cloud.aggregates[m] = x;
    const double lambda = intensity(x, ispec, &result.clamp_events);
    lambda_min = std::min(lambda_min, lambda);
    lambda_max = std::max(lambda_max, lambda);
    logw[m] = log_likelihood(y, lambda, delta);
  }

  result.log_evidence = normalize_log_weights(logw);
  if (!std::isfinite(result.log_evidence)) throw DegeneracyError(n, y, lambda_min, lambda_max);

  std::vector<std::uint32_t> ancestors;
  if (replay) {
    ancestors = rand->ancestors;
  } else {
    auto res_rng = rng.child(0x7265u, n);
    ancestors = resample_multinomial(logw, res_rng);
    if (rand) rand->ancestors = ancestors;
  }

  std::vector<double> next_states(M * J);
  std::vector<double> next_agg(M);
  for (std::size_t m = 0; m < M; ++m) {
    const std::uint32_t a = ancestors[m];
    if (a >= M) throw std::invalid_argument("bootstrap_step: ancestor index out of range");
    std::copy_n(cloud.states.data() + a * J, J, next_states.data() + m * J);
    next_agg[m] = cloud.aggregates[a];
  }
  cloud.states = std::move(next_states);
  cloud.aggregates = std::move(next_agg);
  std::fill(cloud.weights.begin(), cloud.weights.end(), 1.0 / static_cast<double>(M));
  cloud.step_index = n;
  return result;
}

}  // namespace detail

// One assimilation step: exact OU propagation with a per-particle shared
// normal, Poisson weighting of the advanced state, multinomial resampling.
// Returns the step's log marginal evidence log((1/M) sum w).
inline BootstrapStepResult bootstrap_step(ParticleCloud& cloud, unsigned long y, double delta,
                                          const IntensitySpec& ispec, const RngStream& rng) {
  return detail::bootstrap_step_impl(cloud, y, delta, ispec, rng, nullptr, false);
}

inline BootstrapStepResult bootstrap_step_recorded(ParticleCloud& cloud, unsigned long y, double delta,
                                                   const IntensitySpec& ispec, const RngStream& rng,
                                                   StepRandomness& record) {
  return detail::bootstrap_step_impl(cloud, y, delta, ispec, rng, &record, false);
}

inline BootstrapStepResult bootstrap_step_replayed(ParticleCloud& cloud, unsigned long y, double delta,
                                                   const IntensitySpec& ispec, StepRandomness& rand) {
  return detail::bootstrap_step_impl(cloud, y, delta, ispec, RngStream(0), &rand, true);
}

// Per-step posterior summary. The h_* fields are only present for the
// nested (parameter-estimating) filter.
struct PosteriorSummary {
  std::size_t step = 0;
  double time = 0.0;
  double state_mean = 0.0;
  double state_q01 = 0.0;
  double state_q99 = 0.0;
  std::optional<double> h_mean;
  std::optional<double> h_q01;
  std::optional<double> h_q99;
};

struct FilterOptions {
  double prior_sd = 0.1;
};

struct BootstrapResult {
  std::vector<PosteriorSummary> summaries;
  double total_log_evidence = 0.0;
  std::uint64_t clamp_events = 0;
};

// Bootstrap filter against an explicitly provided bank.
inline BootstrapResult run_bootstrap_with_spec(const ObservationSeries& obs, const OUBankSpec& spec,
                                               const IntensitySpec& ispec, std::size_t particles,
                                               const RngStream& rng, const FilterOptions& opts = {}) {
  BootstrapResult result;
  if (obs.size() == 0) return result;
  ParticleCloud cloud = init_bootstrap(spec, particles, opts.prior_sd, rng);
  result.summaries.reserve(obs.size());
  std::vector<double> scratch;
  for (std::size_t n = 1; n <= obs.size(); ++n) {
    const auto step = detail::bootstrap_step_impl(cloud, obs.counts[n - 1], obs.delta, ispec, rng,
                                                  nullptr, false, &scratch);
    result.total_log_evidence += step.log_evidence;
    result.clamp_events += step.clamp_events;
    PosteriorSummary s;
    s.step = n;
    s.time = static_cast<double>(n - 1) * obs.delta;  // the advanced state sits at the bin's left endpoint
    s.state_mean = mean(cloud.aggregates);
    s.state_q01 = quantile(cloud.aggregates, 0.01);
    s.state_q99 = quantile(cloud.aggregates, 0.99);
    result.summaries.push_back(s);
  }
  return result;
}

// Bootstrap filter with known H. The bank dimension comes from the
// H-dependent rule, J = bank_size(N, H).
inline BootstrapResult run_bootstrap(const ObservationSeries& obs, HurstIndex h, const IntensitySpec& ispec,
                                     std::size_t particles, const RngStream& rng,
                                     const FilterOptions& opts = {}) {
  if (obs.size() == 0) return {};
  return run_bootstrap_with_spec(obs, build_bank(h, bank_size(obs.size(), h)), ispec, particles, rng, opts);
}

}  // namespace rvol
