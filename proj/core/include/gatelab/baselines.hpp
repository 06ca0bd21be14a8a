// SPDX-License-Identifier: Apache-2.0
//
// Reference attribution methods the gated probes are compared against:
// exhaustive erasure search (the oracle), leave-one-out, integrated
// gradients, and per-example Bernoulli gates trained with score-function
// gradients.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gatelab/diffmask.hpp"
#include "gatelab/metrics.hpp"
#include "gatelab/model.hpp"
#include "gatelab/toytask.hpp"

namespace gatelab {

// The example restricted to the kept positions (in order); the query is
// untouched and the label is recomputed for the shorter sequence. kept must
// be strictly increasing, non-empty and in range.
ToyExample subsequence(const ToyExample& example,
                       std::span<const std::size_t> kept);

// ---------------------------------------------------------------------------
// Exact erasure search.
// ---------------------------------------------------------------------------

struct ErasureResult {
  std::size_t optimal_size = 0;
  // All minimum-cardinality kept-position sets that preserve the argmax,
  // each sorted ascending, listed in lexicographic order.
  std::vector<std::vector<std::size_t>> optimal_subsets;
  // Uniform over the canonical (lexicographically first) optimum.
  Attribution attribution;
};

// Enumerates every nonempty subsequence, shortest kept sets first, and
// returns all minimal ones that reproduce the unmasked argmax. Sequences
// longer than max_length are rejected (exhaustive search cost doubles per
// position).
ErasureResult erasure_exact(const ModelParams& model,
                            const ToyExample& example,
                            std::size_t max_length = 25);

// ---------------------------------------------------------------------------
// Leave-one-out.
// ---------------------------------------------------------------------------

// score_i = KL(y || f(x with position i deleted)), normalized. A length-1
// sequence scores [1.0] by convention (nothing remains after deletion).
Attribution leave_one_out(const ModelParams& model, const ToyExample& example);

// ---------------------------------------------------------------------------
// Integrated gradients.
// ---------------------------------------------------------------------------

struct IgResult {
  Attribution attribution;          // |signed_sums|, normalized
  std::vector<double> signed_sums;  // per-position path-integral estimates
  double target_value = 0.0;        // predicted-class logit at the input
  double baseline_value = 0.0;      // predicted-class logit at the baseline
};

// Right-endpoint Riemann approximation of the straight-line path integral of
// the predicted-class logit's gradient, taken over the digit-embedding block
// of every position (the query is held fixed):
//
//   signed_i = sum_d (x_{i,d} - b_d) * (1/steps) *
//              sum_{k=1..steps} d f_c / d x_{i,d}  at  b + (k/steps) (x - b)
//
// As steps grows, sum_i signed_i approaches f_c(x) - f_c(baseline).
IgResult integrated_gradients(const ModelParams& model,
                              const ToyExample& example,
                              const Tensor& baseline_input, std::size_t steps);

// Default zero baseline vector.
IgResult integrated_gradients(const ModelParams& model,
                              const ToyExample& example,
                              std::size_t steps = 256);

// ---------------------------------------------------------------------------
// Score-function-trained Bernoulli gates.
// ---------------------------------------------------------------------------

struct ReinforceConfig {
  MaskMode mode = MaskMode::input;
  double margin = 0.05;
  double lr = 1e-2;
  double lr_lambda = 0.1;
  std::size_t steps = 300;
  double ma_decay = 0.9;       // moving-average control variate decay
  double location_init = 5.0;  // initial Bernoulli logits: gates begin open
  std::uint64_t seed = 1;
};

struct ReinforceResult {
  std::vector<double> keep_probs;  // sigmoid of the final logits
  std::vector<double> logits;
  Tensor baseline;                 // learned replacement vector
  double lambda = 0.0;
  std::vector<double> kl_trace;    // sampled KL per step
};

// Per-position Bernoulli keep gates on the same constrained objective as the
// non-amortized gate trainer: expected open count descends analytically, the
// divergence term by score-function gradients with a moving-average control
// variate, and the replacement baseline by pathwise gradients through the
// sampled mask. Deterministic given config.seed.
ReinforceResult reinforce_gates(const ModelParams& model,
                                const ToyExample& example,
                                const ReinforceConfig& config);

}  // namespace gatelab
