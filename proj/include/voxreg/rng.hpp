#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "voxreg/tensor.hpp"

namespace voxreg {

/// Deterministic RNG: mt19937_64 core (bit-exact sequence per the standard)
/// with hand-rolled canonical conversions so draws do not depend on the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0,1) with 53-bit resolution.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  Index uniform_index(Index lo, Index hi_inclusive) {
    return lo + static_cast<Index>(engine_() %
                                   static_cast<std::uint64_t>(hi_inclusive - lo + 1));
  }

  /// Standard normal via Box-Muller; one cached value per pair of draws.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  /// Independent stream for a sub-task; mixing keeps streams decorrelated.
  Rng fork(std::uint64_t salt) {
    return Rng(bits() ^ (salt * 0x9E3779B97F4A7C15ULL));
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Tensor random_uniform(Shape shape, Rng& rng, double lo, double hi) {
  ArrayXd data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) data(i) = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor random_normal(Shape shape, Rng& rng, double stddev = 1.0) {
  ArrayXd data(numel(shape));
  for (Index i = 0; i < data.size(); ++i) data(i) = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace voxreg
