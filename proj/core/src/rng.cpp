// SPDX-License-Identifier: Apache-2.0

#include "gatelab/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gatelab {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

Rng Rng::derive(std::uint64_t seed, std::uint64_t tag) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(tag)));
}

std::size_t Rng::below(std::size_t n) {
  if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
  const std::uint64_t bound = n;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = engine_();
  } while (v >= limit);
  return static_cast<std::size_t>(v % bound);
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on two fresh uniforms; u1 is kept away from zero so the log
  // is finite.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

}  // namespace gatelab
