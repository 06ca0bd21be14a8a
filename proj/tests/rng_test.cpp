// SPDX-License-Identifier: Apache-2.0
#include "gatelab/rng.hpp"

#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"

using namespace gatelab;

TEST_CASE("same seed reproduces the full stream [rng]") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(42), d(42);
  for (int i = 0; i < 1000; ++i) {
    CHECK(c.uniform() == d.uniform());
    CHECK(c.normal() == d.normal());
  }
}

TEST_CASE("derived substreams differ from each other and the parent [rng]") {
  Rng parent(7);
  Rng t0 = Rng::derive(7, 0);
  Rng t1 = Rng::derive(7, 1);
  std::set<std::uint64_t> firsts{parent.next_u64(), t0.next_u64(),
                                 t1.next_u64()};
  CHECK(firsts.size() == 3);

  Rng again = Rng::derive(7, 1);
  Rng ref = Rng::derive(7, 1);
  for (int i = 0; i < 100; ++i) CHECK(again.next_u64() == ref.next_u64());
}

TEST_CASE("uniform lands in [0, 1) and fills the range [rng]") {
  Rng rng(3);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 1e-3);
  CHECK(hi > 1.0 - 1e-3);
}

TEST_CASE("uniform(lo, hi) respects its bounds [rng]") {
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-2.5, 3.5);
    CHECK(u >= -2.5);
    CHECK(u < 3.5);
  }
}

TEST_CASE("below covers all residues and rejects n = 0 [rng]") {
  Rng rng(5);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    const std::size_t v = rng.below(10);
    REQUIRE(v < 10);
    ++counts[v];
  }
  for (int c : counts) CHECK(c > 800);  // ~1000 expected per residue
  CHECK_THROWS_AS((void)rng.below(0), std::invalid_argument);
}

TEST_CASE("normal draws have standard moments [rng]") {
  Rng rng(6);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    CHECK(std::isfinite(x));
    sum += x;
    sumsq += x * x;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}
