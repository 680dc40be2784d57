#pragma once

#include <cmath>
#include <cstdint>

namespace klchol {

/// Counter-based SplitMix64 generator. Output is a fixed function of
/// (seed, counter), so streams are identical on every platform.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in (0, 1]; never returns 0 so it is safe inside log().
  double next_uniform() {
    return (next_u64() >> 11) * 0x1.0p-53 + 0x1.0p-54;
  }

  /// Standard normal via Box-Muller, no cached second value.
  double next_normal() {
    const double u = next_uniform();
    const double v = next_uniform();
    return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * M_PI * v);
  }

 private:
  std::uint64_t state_;
};

}  // namespace klchol
