// SPDX-License-Identifier: Apache-2.0
//
// Deterministic random number generation. All draws are derived from raw
// mt19937_64 output with explicit bit manipulation instead of the standard
// <random> distributions, whose algorithms are implementation-defined; this
// keeps streams byte-identical across compilers and standard libraries.
#pragma once

#include <cstddef>
#include <cstdint>
#include <random>

namespace gatelab {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Derives an independent generator for a substream. The tag is mixed into
  // the seed with splitmix64 so that (seed, tag) pairs do not collide for
  // small values of either.
  static Rng derive(std::uint64_t seed, std::uint64_t tag);

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 bits of precision.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling, so the result is unbiased
  // and consumes a deterministic stream of engine words.
  std::size_t below(std::size_t n);

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace gatelab
