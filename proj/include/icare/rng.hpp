#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "icare/common.hpp"

namespace icare {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix64(std::uint64_t x) {
  std::uint64_t s = x;
  return splitmix64(s);
}
}  // namespace detail

/// Deterministic counter-based random stream (splitmix64 core). Independent
/// streams are derived from (seed, stream id) so parallel and serial
/// generation of a corpus produce identical bytes. Distributions are
/// hand-rolled: the standard library's are not reproducible across
/// implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : state_(detail::mix64(seed ^ 0xD1B54A32D192ED03ULL)) {}

  static RandomStream derive(std::uint64_t seed, std::uint64_t stream_id) {
    return RandomStream(detail::mix64(seed) ^ detail::mix64(stream_id * 0x9E3779B97F4A7C15ULL + 1));
  }

  static RandomStream derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return derive(detail::mix64(seed) ^ detail::mix64(a + 0x632BE59BD9B4E019ULL), b);
  }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  /// Uniform integer in [0, n). Unbiased enough for simulation use
  /// (multiply-shift reduction).
  Index uniform_index(Index n) {
    return static_cast<Index>((static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
  }

  /// Standard normal via Box-Muller; the spare value is cached so the
  /// stream consumption pattern stays deterministic.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // u1 == 0 would take log(0); nudge to the smallest representable draw.
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (Index i = static_cast<Index>(v.size()) - 1; i > 0; --i) {
      Index j = uniform_index(i + 1);
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(j)]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Stable 64-bit hash for id-based splits and label flips.
inline std::uint64_t stable_hash(std::uint64_t a, std::uint64_t b = 0x100000001B3ULL) {
  return detail::mix64(detail::mix64(a) ^ detail::mix64(b + 0x2545F4914F6CDD1DULL));
}

}  // namespace icare
