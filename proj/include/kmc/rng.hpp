#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include <Eigen/Core>

#include "kmc/errors.hpp"

namespace kmc {

// Counter-based generator: output i of stream (key) is
// splitmix64_finalizer(key + i * GOLDEN_GAMMA), the SplitMix construction of
// Steele, Lea & Flood. Every draw is a pure function of (seed, stream,
// counter), so results are bit-reproducible for a given seed and call
// sequence, and fork() yields independent streams for concurrent trials.
class Rng {
public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed + 0x9E3779B97F4A7C15ULL * (stream + 1))) {}

  std::uint64_t next_u64() {
    ctr_ += 0x9E3779B97F4A7C15ULL;
    return mix(key_ + ctr_);
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform01(); }

  // Inclusive integer range, bias removed by rejection.
  long long uniform_int(long long lo, long long hi) {
    require_input(lo <= hi, "uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<long long>(next_u64());  // full 64-bit range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t u;
    do {
      u = next_u64();
    } while (u >= limit);
    return lo + static_cast<long long>(u % span);
  }

  // Box-Muller; consumes two uniforms, the sine branch is discarded so each
  // draw maps to a fixed counter window.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps log finite
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Eigen::VectorXd normal_vec(Eigen::Index d) {
    Eigen::VectorXd v(d);
    for (Eigen::Index i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

  double exponential() { return -std::log(1.0 - uniform01()); }

  // Marsaglia-Tsang for shape >= 1, boost for shape < 1.
  double gamma(double shape, double rate) {
    require_input(shape > 0.0 && rate > 0.0, "gamma: shape and rate must be positive");
    if (shape < 1.0) {
      const double u = uniform01();
      return gamma(shape + 1.0, rate) * std::pow(1.0 - u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v / rate;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v / rate;
    }
  }

  // Independent sub-stream; safe to use concurrently with the parent.
  Rng fork(std::uint64_t stream) const {
    Rng r(0);
    r.key_ = mix(key_ ^ mix(stream + 0xD1B54A32D192ED03ULL));
    r.ctr_ = 0;
    return r;
  }

private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t ctr_ = 0;
};

}  // namespace kmc
