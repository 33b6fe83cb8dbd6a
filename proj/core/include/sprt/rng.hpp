// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "sprt/common.hpp"

namespace sprt {

/// Seeded RNG with hand-rolled distributions. std::normal_distribution is
/// implementation-defined, so every sampled stream goes through these
/// transforms to keep outputs identical across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  real uniform() {
    return static_cast<real>(engine_() >> 11) * 0x1.0p-53;
  }

  real uniform(real lo, real hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int n) {  // [0, n)
    return static_cast<int>(engine_() % static_cast<uint64_t>(n));
  }

  /// Standard normal via Box-Muller (no cached second value, for simpler
  /// reproducibility reasoning).
  real normal() {
    real u1 = uniform();
    real u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  real normal(real mean, real stddev) { return mean + stddev * normal(); }

  /// Derive an independent stream; avoids correlated sub-seeds.
  Rng fork(uint64_t salt) {
    uint64_t s = next_u64();
    return Rng(s ^ (salt * 0x9e3779b97f4a7c15ull));
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace sprt
