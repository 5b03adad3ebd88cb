#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace atlaspl {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: draw n of stream (seed, stream) is
/// splitmix64(key + n * golden), key = splitmix64(seed ^ splitmix64(stream)).
/// Fully specified integer arithmetic, so sequences match on every platform.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream) : key_(splitmix64(seed ^ splitmix64(stream))) {}

  [[nodiscard]] std::uint64_t at(std::uint64_t n) const { return splitmix64(key_ + n * 0x9e3779b97f4a7c15ULL); }

  /// Uniform in [0, 1) with 53 random bits.
  [[nodiscard]] double uniform_at(std::uint64_t n) const {
    return static_cast<double>(at(n) >> 11) * 0x1.0p-53;
  }

  std::uint64_t next() { return at(counter_++); }
  double uniform() { return uniform_at(counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cosine branch only, two draws per call).
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace atlaspl
