// SPDX-License-Identifier: Apache-2.0
//
// Tests for the comparison attribution methods: exhaustive erasure search
// (verified against a randomized brute-force checker), leave-one-out,
// integrated gradients (endpoint identity, completeness, convergence), and
// the score-function gate trainer.
#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "gatelab/baselines.hpp"
#include "gatelab/metrics.hpp"
#include "gatelab/model.hpp"
#include "gatelab/rng.hpp"
#include "gatelab/tape.hpp"
#include "gatelab/toytask.hpp"
#include "test_util.hpp"

using namespace gatelab;
using namespace gatelab::testing;

namespace {

ToyExample make_example(std::vector<int> digits, int n, int m) {
  ToyExample example;
  example.digits = std::move(digits);
  example.query_n = n;
  example.query_m = m;
  const auto count = [&](int d) {
    return std::count(example.digits.begin(), example.digits.end(), d);
  };
  example.label = count(n) > count(m);
  return example;
}

}  // namespace

TEST_CASE("subsequence keeps positions in order and relabels [baselines]") {
  ToyExample example = make_example({7, 3, 7, 1}, 7, 1);
  CHECK(example.label);

  std::vector<std::size_t> kept = {1, 3};
  ToyExample sub = subsequence(example, kept);
  CHECK(sub.digits == std::vector<int>{3, 1});
  CHECK(sub.query_n == 7);
  CHECK(sub.query_m == 1);
  CHECK_FALSE(sub.label);  // count(7)=0 not > count(1)=1

  CHECK_THROWS_AS((void)subsequence(example, std::vector<std::size_t>{}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)subsequence(example, std::vector<std::size_t>{1, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)subsequence(example, std::vector<std::size_t>{3, 1}),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)subsequence(example, std::vector<std::size_t>{4}),
                  std::invalid_argument);
}

TEST_CASE("erasure_exact finds minimal argmax-preserving kept sets [baselines][erasure]") {
  ModelParams model = small_model(51);
  ToyExample example = make_example({4, 2, 9, 5, 0}, 9, 5);
  ModelTrace trace = forward(model, example);
  const int target = predicted_class(trace.class_probs);

  ErasureResult result = erasure_exact(model, example);
  REQUIRE(!result.optimal_subsets.empty());
  CHECK(result.optimal_size >= 1);
  CHECK(result.optimal_size <= 5);

  // Every reported optimum preserves the argmax when fed back.
  for (const auto& kept : result.optimal_subsets) {
    REQUIRE(kept.size() == result.optimal_size);
    CHECK(std::is_sorted(kept.begin(), kept.end()));
    ModelTrace masked = forward(model, subsequence(example, kept));
    CHECK(predicted_class(masked.class_probs) == target);
  }

  // Optima are listed lexicographically without duplicates.
  CHECK(std::is_sorted(result.optimal_subsets.begin(),
                       result.optimal_subsets.end()));
  CHECK(std::adjacent_find(result.optimal_subsets.begin(),
                           result.optimal_subsets.end()) ==
        result.optimal_subsets.end());

  // Brute-force check: no strictly smaller subset preserves the argmax,
  // and the optima list is exactly the preserving sets of minimal size.
  std::vector<std::vector<std::size_t>> expected;
  for (std::size_t size = 1; size <= 5 && expected.empty(); ++size) {
    std::vector<std::vector<std::size_t>> found;
    std::vector<std::size_t> combo(size);
    // Enumerate all size-element subsets of {0..4} by odometer.
    std::function<void(std::size_t, std::size_t)> visit =
        [&](std::size_t slot, std::size_t start) {
          if (slot == size) {
            ModelTrace masked = forward(model, subsequence(example, combo));
            if (predicted_class(masked.class_probs) == target)
              found.push_back(combo);
            return;
          }
          for (std::size_t p = start; p < 5; ++p) {
            combo[slot] = p;
            visit(slot + 1, p + 1);
          }
        };
    visit(0, 0);
    expected = std::move(found);
  }
  CHECK(result.optimal_subsets == expected);

  // The attribution is uniform over the canonical first optimum.
  const auto& canonical = result.optimal_subsets.front();
  for (std::size_t i = 0; i < 5; ++i) {
    const bool in = std::find(canonical.begin(), canonical.end(), i) !=
                    canonical.end();
    const double want =
        in ? 1.0 / static_cast<double>(canonical.size()) : 0.0;
    CHECK(result.attribution.normalized[i] ==
          doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("erasure_exact handles the length-1 case [baselines][erasure]") {
  ModelParams model = small_model(53);
  ToyExample example = make_example({6}, 6, 2);
  ErasureResult result = erasure_exact(model, example);
  CHECK(result.optimal_size == 1);
  REQUIRE(result.optimal_subsets.size() == 1);
  CHECK(result.optimal_subsets[0] == std::vector<std::size_t>{0});
  CHECK(result.attribution.normalized[0] == 1.0);
}

TEST_CASE("erasure_exact rejects over-long sequences naming the limit [baselines][erasure]") {
  ModelParams model = small_model(55);
  ToyExample example = make_example({1, 2, 3, 4, 5, 1, 2, 3}, 1, 2);
  try {
    (void)erasure_exact(model, example, 6);
    FAIL("expected a length guard");
  } catch (const std::invalid_argument& e) {
    const std::string what = e.what();
    CHECK(what.find('8') != std::string::npos);
    CHECK(what.find('6') != std::string::npos);
  }
}

TEST_CASE("leave_one_out scores deletions by divergence [baselines]") {
  ModelParams model = small_model(57);
  ToyExample example = make_example({3, 8, 3, 5, 0, 9}, 3, 5);
  Attribution loo = leave_one_out(model, example);
  REQUIRE(loo.raw.size() == 6);
  double total = 0.0;
  for (double v : loo.normalized) {
    CHECK(v >= 0.0);
    total += v;
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

  // Deleting position i and comparing against the full prediction must
  // equal the unsmoothed KL computed by hand.
  ModelTrace trace = forward(model, example);
  std::vector<std::size_t> kept_all = {0, 1, 2, 3, 4, 5};
  for (std::size_t i = 0; i < 6; ++i) {
    std::vector<std::size_t> kept;
    for (std::size_t j = 0; j < 6; ++j)
      if (j != i) kept.push_back(j);
    ModelTrace deleted = forward(model, subsequence(example, kept));
    const double want = kl_divergence_unsmoothed(trace.class_probs.data,
                                                 deleted.class_probs.data);
    CHECK(loo.raw[i] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("leave_one_out length-1 convention [baselines]") {
  ModelParams model = small_model(59);
  Attribution loo = leave_one_out(model, make_example({4}, 4, 7));
  REQUIRE(loo.raw.size() == 1);
  CHECK(loo.raw[0] == 1.0);
  CHECK(loo.normalized[0] == 1.0);
}

TEST_CASE("integrated gradients with one step equals endpoint gradient [baselines][ig]") {
  ModelParams model = small_model(61);
  ToyExample example = make_example({2, 7, 5}, 2, 5);
  ModelTrace trace = forward(model, example);
  const int target = predicted_class(trace.class_probs);
  const std::size_t e = 4;
  Rng rng(611);
  Tensor baseline = random_tensor(rng, {e});

  IgResult ig = integrated_gradients(model, example, baseline, 1);
  REQUIRE(ig.signed_sums.size() == 3);

  // With a single right-endpoint step the estimate is grad f_c at x,
  // dotted with (x - b) per digit block; compute that directly on a tape.
  Tape tape;
  ModelOnTape mt = upload_model(tape, model, /*trainable=*/false);
  std::vector<NodeId> h0_nodes;
  std::vector<NodeId> block_nodes;
  Tensor query(std::vector<std::size_t>{2 * e}, std::vector<double>(
      trace.h0[0].data.begin() + e, trace.h0[0].data.end()));
  NodeId query_node = tape.constant(query);
  for (std::size_t i = 0; i < 3; ++i) {
    Tensor block(std::vector<std::size_t>{e}, std::vector<double>(
        trace.h0[i].data.begin(), trace.h0[i].data.begin() + e));
    NodeId block_node = tape.leaf(block);
    block_nodes.push_back(block_node);
    h0_nodes.push_back(tape.concat(block_node, query_node));
  }
  NodeId logits = logits_from_h0_on_tape(tape, mt, h0_nodes);
  Tensor pick = Tensor::zeros({2});
  pick.data[static_cast<std::size_t>(target)] = 1.0;
  NodeId fc = tape.sum(tape.mul(logits, tape.constant(pick)));
  tape.backward(fc);
  CHECK(ig.target_value == doctest::Approx(tape.value(fc).data[0])
                              .epsilon(1e-12));

  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor& g = tape.grad(block_nodes[i]);
    double want = 0.0;
    for (std::size_t d = 0; d < e; ++d)
      want += g.data[d] * (trace.h0[i].data[d] - baseline.data[d]);
    CHECK(ig.signed_sums[i] == doctest::Approx(want).epsilon(1e-9));
    CHECK(ig.attribution.raw[i] ==
          doctest::Approx(std::abs(want)).epsilon(1e-9));
  }
}

TEST_CASE("integrated gradients satisfy completeness as steps grow [baselines][ig]") {
  ModelParams model = small_model(63);
  ToyExample example = make_example({1, 6, 6, 0, 8}, 6, 8);

  IgResult ig = integrated_gradients(model, example, 256);
  double total = 0.0;
  for (double v : ig.signed_sums) total += v;
  const double span = ig.target_value - ig.baseline_value;
  CHECK(std::abs(total - span) < 1e-2 * std::max(1.0, std::abs(span)));

  // Doubling the resolution barely moves the normalized attribution.
  IgResult fine = integrated_gradients(model, example, 512);
  double drift = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    drift += std::abs(ig.attribution.normalized[i] -
                      fine.attribution.normalized[i]);
  CHECK(drift < 1e-2);
}

TEST_CASE("integrated gradients vanish when the baseline is the input [baselines][ig]") {
  ModelParams model = small_model(65);
  ToyExample example = make_example({9, 9}, 9, 4);
  ModelTrace trace = forward(model, example);
  // Both positions hold the same digit, so one shared block equals both
  // inputs; the path has zero length and every signed sum is exactly 0.
  Tensor block(std::vector<std::size_t>{4}, std::vector<double>(
      trace.h0[0].data.begin(), trace.h0[0].data.begin() + 4));
  IgResult ig = integrated_gradients(model, example, block, 16);
  for (double v : ig.signed_sums) CHECK(v == 0.0);
  // Zero information: attribution falls back to uniform.
  for (double v : ig.attribution.normalized)
    CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS((void)integrated_gradients(model, example, block, 0),
                  std::invalid_argument);
}

TEST_CASE("reinforce gates start open and train deterministically [baselines][reinforce]") {
  ModelParams model = small_model(67);
  ToyExample example = make_example({5, 1, 5, 2}, 5, 2);
  ReinforceConfig config;
  config.steps = 15;

  ReinforceResult a = reinforce_gates(model, example, config);
  ReinforceResult b = reinforce_gates(model, example, config);
  REQUIRE(a.keep_probs.size() == 4);
  REQUIRE(a.kl_trace.size() == 15);
  CHECK(a.kl_trace.front() < 0.05);  // open init keeps the prediction
  CHECK(a.lambda >= 0.0);
  CHECK(a.keep_probs == b.keep_probs);
  CHECK(a.logits == b.logits);
  CHECK(bit_equal(a.baseline, b.baseline));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(a.keep_probs[i] > 0.0);
    CHECK(a.keep_probs[i] < 1.0);
    CHECK(a.keep_probs[i] ==
          doctest::Approx(1.0 / (1.0 + std::exp(-a.logits[i])))
              .epsilon(1e-12));
  }
}

TEST_CASE("reinforce expected-open pressure closes gates without a constraint [baselines][reinforce]") {
  ModelParams model = small_model(69);
  ToyExample example = make_example({3, 3, 8}, 3, 8);
  ReinforceConfig config;
  config.steps = 100;
  config.lr = 0.1;      // move far enough to observe the drop
  config.margin = 1e6;  // KL constraint never binds; pure sparsity pressure
  ReinforceResult result = reinforce_gates(model, example, config);
  double mean = 0.0;
  for (double p : result.keep_probs) mean += p / 3.0;
  // All keep probabilities fall from sigmoid(5) ~ 0.993 at init.
  CHECK(mean < 0.5);
  CHECK(result.lambda == 0.0);
}
