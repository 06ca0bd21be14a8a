// SPDX-License-Identifier: Apache-2.0
//
// Divergence and agreement metric tests, pinned against hand-computed
// values: smoothed/unsmoothed KL, Jensen-Shannon bounds and symmetry,
// attribution normalization fallbacks, and kept-set agreement scoring.
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "gatelab/metrics.hpp"

using namespace gatelab;

namespace {
constexpr double kLog2 = 0.6931471805599453;
}

TEST_CASE("smoothed KL of a point mass against uniform is log 2 [metrics]") {
  std::vector<double> p = {1.0, 0.0};
  std::vector<double> q = {0.5, 0.5};
  CHECK(std::abs(kl_divergence(p, q) - kLog2) < 1e-7);
  // Self-divergence is not exactly zero because only q is smoothed.
  CHECK(kl_divergence(p, p) < 1e-7);
  CHECK(kl_divergence(p, p) >= 0.0);
  // KL is asymmetric: mass mismatch counts only where p has support.
  std::vector<double> r = {0.75, 0.25};
  const double manual =
      0.75 * std::log(0.75 / 0.5) + 0.25 * std::log(0.25 / 0.5);
  CHECK(std::abs(kl_divergence(r, q) - manual) < 1e-7);
}

TEST_CASE("unsmoothed KL diverges on support violations [metrics]") {
  std::vector<double> p = {1.0, 0.0};
  std::vector<double> q = {0.0, 1.0};
  CHECK(std::isinf(kl_divergence_unsmoothed(p, q)));
  CHECK(kl_divergence_unsmoothed(p, q) > 0.0);

  std::vector<double> u = {0.5, 0.5};
  CHECK(kl_divergence_unsmoothed(p, u) == doctest::Approx(kLog2).epsilon(1e-12));
  CHECK(kl_divergence_unsmoothed(u, u) == 0.0);
}

TEST_CASE("kl_divergence rejects mismatched lengths [metrics]") {
  std::vector<double> p = {1.0, 0.0};
  std::vector<double> q = {1.0, 0.0, 0.0};
  CHECK_THROWS_AS((void)kl_divergence(p, q), std::invalid_argument);
  CHECK_THROWS_AS((void)kl_divergence_unsmoothed(p, q),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)js_divergence(p, q), std::invalid_argument);
}

TEST_CASE("js_divergence is symmetric, finite, bounded by log 2 [metrics]") {
  std::vector<double> p = {1.0, 0.0};
  std::vector<double> q = {0.0, 1.0};
  // Disjoint support maxes JS at log 2 even where KL is infinite.
  CHECK(js_divergence(p, q) == doctest::Approx(kLog2).epsilon(1e-12));

  std::vector<double> a = {0.7, 0.2, 0.1};
  std::vector<double> b = {0.1, 0.3, 0.6};
  const double ab = js_divergence(a, b);
  const double ba = js_divergence(b, a);
  // Symmetric up to summation-order rounding.
  CHECK(ab == doctest::Approx(ba).epsilon(1e-14));
  CHECK(ab > 0.0);
  CHECK(ab <= kLog2);
  CHECK(js_divergence(a, a) == doctest::Approx(0.0).epsilon(1e-12));

  // Hand value: JS(p, u) for p=[1,0], u=[0.5,0.5]; mix m=[0.75,0.25].
  std::vector<double> u = {0.5, 0.5};
  const double manual = 0.5 * (1.0 * std::log(1.0 / 0.75)) +
                        0.5 * (0.5 * std::log(0.5 / 0.75) +
                               0.5 * std::log(0.5 / 0.25));
  CHECK(js_divergence(p, u) == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("Attribution::from_raw normalizes and falls back to uniform [metrics]") {
  Attribution a = Attribution::from_raw({2.0, 6.0, 0.0});
  REQUIRE(a.normalized.size() == 3);
  CHECK(a.normalized[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(a.normalized[1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(a.normalized[2] == 0.0);
  CHECK(a.raw[1] == 6.0);

  Attribution zero = Attribution::from_raw({0.0, 0.0, 0.0, 0.0});
  for (double v : zero.normalized)
    CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  CHECK_THROWS_AS((void)Attribution::from_raw({0.5, -0.1}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)Attribution::from_raw({}), std::invalid_argument);
}

TEST_CASE("mask_agreement scores a kept-set against the best optimum [metrics]") {
  // Keeping everything when the optimum is {0}: precision 1/4, recall 1.
  AgreementReport all = mask_agreement({0, 1, 2, 3}, {{0}}, 4, true);
  CHECK(all.precision == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(all.recall == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(all.f1 == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(all.sparsity == 0.0);
  CHECK(all.optimality == 0.0);  // size 4 != optimum size 1

  // Exact match on one of several optima.
  AgreementReport exact = mask_agreement({2}, {{0}, {2}}, 4, true);
  CHECK(exact.precision == 1.0);
  CHECK(exact.recall == 1.0);
  CHECK(exact.f1 == 1.0);
  CHECK(exact.sparsity == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(exact.optimality == 1.0);

  // Right size but wrong position: the F1 reflects the miss, while
  // optimality trusts the caller's argmax flag plus the size match.
  AgreementReport miss = mask_agreement({1}, {{0}, {2}}, 4, false);
  CHECK(miss.f1 == 0.0);
  CHECK(miss.optimality == 0.0);
  AgreementReport lucky = mask_agreement({1}, {{0}, {2}}, 4, true);
  CHECK(lucky.optimality == 1.0);

  // Prediction not preserved disqualifies optimality even on exact match.
  AgreementReport broken = mask_agreement({2}, {{2}}, 4, false);
  CHECK(broken.f1 == 1.0);
  CHECK(broken.optimality == 0.0);

  // Empty kept-set: no true positives.
  AgreementReport empty = mask_agreement({}, {{0}}, 4, true);
  CHECK(empty.precision == 0.0);
  CHECK(empty.recall == 0.0);
  CHECK(empty.f1 == 0.0);
  CHECK(empty.sparsity == 1.0);
}

TEST_CASE("mask_agreement picks the optimum maximizing F1 [metrics]") {
  // kept = {0, 1}; optima {0} (F1 = 2/3) and {2, 3} (F1 = 0).
  AgreementReport r = mask_agreement({0, 1}, {{0}, {2, 3}}, 4, true);
  CHECK(r.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(r.precision == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(r.recall == 1.0);
}

TEST_CASE("average_agreement is the field-wise mean [metrics]") {
  AgreementReport a = mask_agreement({0}, {{0}}, 2, true);   // perfect
  AgreementReport b = mask_agreement({1}, {{0}}, 2, false);  // miss
  AgreementReport avg = average_agreement(std::vector{a, b});
  CHECK(avg.f1 == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(avg.precision == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(avg.recall == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(avg.sparsity == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(avg.optimality == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("binarize_gates keeps positions at or above the threshold [metrics]") {
  std::vector<double> gates = {0.0, 0.5, 0.49999, 1.0, 0.7};
  std::vector<std::size_t> kept = binarize_gates(gates);
  CHECK(kept == std::vector<std::size_t>{1, 3, 4});
  CHECK(binarize_gates(gates, 0.8) == std::vector<std::size_t>{3});
  CHECK(binarize_gates({}, 0.5).empty());
}

TEST_CASE("evaluate_against_ground_truth averages per-example divergences [metrics]") {
  std::vector<Attribution> attributions;
  attributions.push_back(Attribution::from_raw({1.0, 0.0}));
  attributions.push_back(Attribution::from_raw({0.5, 0.5}));
  std::vector<std::vector<double>> truth = {{1.0, 0.0}, {1.0, 0.0}};

  DivergenceSummary s = evaluate_against_ground_truth(attributions, truth);
  // First example matches exactly; second puts half the mass on the wrong
  // position: KL(truth || attr) = log 2.
  CHECK(s.mean_kl == doctest::Approx(0.5 * kLog2).epsilon(1e-6));
  CHECK(s.mean_kl_unsmoothed ==
        doctest::Approx(0.5 * kLog2).epsilon(1e-9));
  CHECK(s.mean_js == doctest::Approx(0.5 * js_divergence(truth[0],
                                                         attributions[1]
                                                             .normalized))
                         .epsilon(1e-12));

  // An attribution with zero mass on a supported position sends the
  // unsmoothed mean to infinity while the smoothed mean stays finite.
  attributions[1] = Attribution::from_raw({0.0, 1.0});
  DivergenceSummary hard = evaluate_against_ground_truth(attributions, truth);
  CHECK(std::isinf(hard.mean_kl_unsmoothed));
  CHECK(std::isfinite(hard.mean_kl));
  const std::vector<std::vector<double>> short_truth = {{1.0, 0.0}};
  CHECK_THROWS_AS(
      (void)evaluate_against_ground_truth(attributions, short_truth),
      std::invalid_argument);
}
