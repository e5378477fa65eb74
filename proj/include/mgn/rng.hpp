#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace mgn {

/// Splittable 64-bit generator built on SplitMix64.
///
/// The stream is a pure function of the 64-bit seed, so identical seeds give
/// identical `next_u64()` sequences on every platform. Child streams are
/// derived from the origin seed (not from the current position), which makes
/// them independent of how many values the parent has already produced.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), state_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  /// Child stream keyed by a purpose string, e.g. "init", "augment", "dataset".
  Rng child(std::string_view purpose) const { return Rng(mix(seed_ ^ mix(fnv1a(purpose)))); }

  /// Child stream keyed by an index (per-sample or per-step streams).
  Rng child(std::uint64_t index) const { return Rng(mix(seed_ + kGolden * (index + 1) + 0x5851f42d4c957f2dULL)); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Uses Lemire's multiply-shift with rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
      if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  bool coin() { return (next_u64() >> 63) != 0; }

  /// Standard normal via Box-Muller; one draw per call, no cached spare.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  static constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t state_;
};

}  // namespace mgn
