#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>

namespace rvol {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_key(std::uint64_t key, std::uint64_t word) {
  return splitmix64(key ^ (word * 0xd1342543de82ef95ull + 0x2545f4914f6cdd1dull));
}

}  // namespace detail

// Counter-keyed random stream (xoshiro256++ core). Substreams are derived
// from the parent's immutable key, never from its draw position, so a
// stream identified by the same (seed, keys...) path always yields the
// same sequence regardless of what was drawn elsewhere. This is what makes
// common-random-number couplings and thread-count-independent results work.
class RngStream {
 public:
  using result_type = std::uint64_t;

  explicit RngStream(std::uint64_t seed) : key_(detail::splitmix64(seed)) { reseed(); }

  RngStream child(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
    std::uint64_t k = key_;
    k = detail::mix_key(k, a);
    k = detail::mix_key(k, b);
    k = detail::mix_key(k, c);
    return RngStream(k, from_key_tag{});
  }

  std::uint64_t operator()() { return next_u64(); }
  static constexpr std::uint64_t min() { return 0; }
  static constexpr std::uint64_t max() { return std::numeric_limits<std::uint64_t>::max(); }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform on [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via the polar method; the second component is discarded
  // so draws are independent of call history.
  double normal() {
    for (;;) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  unsigned long poisson(double mean) {
    std::poisson_distribution<unsigned long> dist(mean);
    return dist(*this);
  }

 private:
  struct from_key_tag {};
  RngStream(std::uint64_t key, from_key_tag) : key_(key) { reseed(); }

  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  void reseed() {
    std::uint64_t k = key_;
    for (auto& w : s_) {
      k = detail::splitmix64(k);
      w = k;
    }
  }

  std::uint64_t key_;
  std::uint64_t s_[4];
};

}  // namespace rvol
