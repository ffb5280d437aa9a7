#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include <Eigen/Dense>

namespace fova {

/// Seeded random stream.
///
/// Distribution sampling is done here instead of through the standard
/// distribution classes, whose output is implementation-defined. Only the
/// engine sequence of std::mt19937_64 is fixed by the standard, so every
/// draw below is reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open_zero() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per call).
  double normal() {
    const double u1 = uniform_open_zero();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Inverse-CDF draw from a probability vector. Falls back to the last
  /// index with positive mass when rounding leaves the cumulative sum short.
  template <typename Vec>
  int categorical(const Vec& probs) {
    const double u = uniform();
    double cum = 0.0;
    int last_positive = 0;
    for (Eigen::Index i = 0; i < probs.size(); ++i) {
      if (probs[i] > 0.0) last_positive = static_cast<int>(i);
      cum += probs[i];
      if (u < cum) return static_cast<int>(i);
    }
    return last_positive;
  }

 private:
  std::mt19937_64 engine_;
};

/// Mixes several integers into one 64-bit seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ b);
}

}  // namespace fova
