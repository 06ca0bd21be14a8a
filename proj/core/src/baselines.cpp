// SPDX-License-Identifier: Apache-2.0

#include "gatelab/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gatelab/optim.hpp"
#include "gatelab/rng.hpp"

namespace gatelab {

ToyExample subsequence(const ToyExample& example,
                       std::span<const std::size_t> kept) {
  if (kept.empty()) {
    throw std::invalid_argument("subsequence: kept set must be non-empty");
  }
  ToyExample out;
  out.query_n = example.query_n;
  out.query_m = example.query_m;
  std::size_t prev = 0;
  bool first = true;
  for (std::size_t pos : kept) {
    if (pos >= example.length() || (!first && pos <= prev)) {
      throw std::invalid_argument(
          "subsequence: kept positions must be strictly increasing and in "
          "range");
    }
    out.digits.push_back(example.digits[pos]);
    prev = pos;
    first = false;
  }
  out.label = label_for(out.digits, out.query_n, out.query_m);
  return out;
}

// ---------------------------------------------------------------------------
// Exact erasure search.
// ---------------------------------------------------------------------------

namespace {

// Advances `combo` (ascending positions) to the next k-combination of
// {0..len-1} in lexicographic order; returns false after the last one.
bool next_combination(std::vector<std::size_t>& combo, std::size_t len) {
  const std::size_t k = combo.size();
  std::size_t i = k;
  while (i > 0) {
    --i;
    if (combo[i] + 1 <= len - (k - i)) {
      ++combo[i];
      for (std::size_t j = i + 1; j < k; ++j) combo[j] = combo[j - 1] + 1;
      return true;
    }
  }
  return false;
}

}  // namespace

ErasureResult erasure_exact(const ModelParams& model,
                            const ToyExample& example,
                            std::size_t max_length) {
  const std::size_t len = example.length();
  if (len > max_length) {
    throw std::invalid_argument(
        "erasure_exact: sequence length " + std::to_string(len) +
        " exceeds the exhaustive-search bound " + std::to_string(max_length));
  }
  const ModelTrace trace = forward(model, example);
  const int target = predicted_class(trace.class_probs);

  ErasureResult result;
  for (std::size_t k = 1; k <= len && result.optimal_subsets.empty(); ++k) {
    std::vector<std::size_t> combo(k);
    for (std::size_t i = 0; i < k; ++i) combo[i] = i;
    do {
      const ToyExample sub = subsequence(example, combo);
      const ModelTrace sub_trace = forward(model, sub);
      if (predicted_class(sub_trace.class_probs) == target) {
        result.optimal_subsets.push_back(combo);
      }
    } while (next_combination(combo, len));
    if (!result.optimal_subsets.empty()) result.optimal_size = k;
  }
  if (result.optimal_subsets.empty()) {
    // Even the full sequence is a candidate subset, so this cannot happen.
    throw std::runtime_error("erasure_exact: no prediction-preserving subset");
  }
  std::vector<double> raw(len, 0.0);
  for (std::size_t pos : result.optimal_subsets.front()) raw[pos] = 1.0;
  result.attribution = Attribution::from_raw(std::move(raw));
  return result;
}

// ---------------------------------------------------------------------------
// Leave-one-out.
// ---------------------------------------------------------------------------

Attribution leave_one_out(const ModelParams& model,
                          const ToyExample& example) {
  const std::size_t len = example.length();
  if (len == 1) {
    return Attribution::from_raw({1.0});
  }
  const ModelTrace trace = forward(model, example);
  std::vector<double> scores(len);
  std::vector<std::size_t> kept;
  kept.reserve(len - 1);
  for (std::size_t i = 0; i < len; ++i) {
    kept.clear();
    for (std::size_t j = 0; j < len; ++j) {
      if (j != i) kept.push_back(j);
    }
    const ModelTrace del = forward(model, subsequence(example, kept));
    scores[i] = kl_divergence_unsmoothed(trace.class_probs.data,
                                         del.class_probs.data);
  }
  return Attribution::from_raw(std::move(scores));
}

// ---------------------------------------------------------------------------
// Integrated gradients.
// ---------------------------------------------------------------------------

IgResult integrated_gradients(const ModelParams& model,
                              const ToyExample& example,
                              const Tensor& baseline_input,
                              std::size_t steps) {
  if (steps == 0) {
    throw std::invalid_argument("integrated_gradients: steps must be >= 1");
  }
  const std::size_t e = model.embed_dim();
  if (baseline_input.shape != std::vector<std::size_t>{e}) {
    throw std::invalid_argument(
        "integrated_gradients: baseline shape " +
        shape_str(baseline_input.shape) + " does not match embedding shape " +
        shape_str({e}));
  }
  const ModelTrace trace = forward(model, example);
  const int target = predicted_class(trace.class_probs);
  const std::size_t len = example.length();

  // Digit-embedding block per position; the query tail of h0 is held fixed.
  std::vector<Tensor> x(len);
  std::vector<Tensor> delta(len);  // x_i - b
  for (std::size_t i = 0; i < len; ++i) {
    x[i] = Tensor::zeros({e});
    delta[i] = Tensor::zeros({e});
    for (std::size_t d = 0; d < e; ++d) {
      x[i].data[d] = trace.h0[i].data[d];
      delta[i].data[d] = x[i].data[d] - baseline_input.data[d];
    }
  }
  Tensor query = Tensor::zeros({2 * e});
  for (std::size_t d = 0; d < 2 * e; ++d) {
    query.data[d] = trace.h0.front().data[e + d];
  }
  Tensor onehot = Tensor::zeros({2});
  onehot.data[static_cast<std::size_t>(target)] = 1.0;

  IgResult result;
  result.signed_sums.assign(len, 0.0);
  for (std::size_t k = 1; k <= steps; ++k) {
    const double alpha =
        static_cast<double>(k) / static_cast<double>(steps);
    Tape tape;
    const ModelOnTape mt = upload_model(tape, model, /*trainable=*/false);
    const NodeId query_node = tape.constant(query);
    std::vector<NodeId> blocks(len), h0_nodes(len);
    for (std::size_t i = 0; i < len; ++i) {
      Tensor interp = Tensor::zeros({e});
      for (std::size_t d = 0; d < e; ++d) {
        interp.data[d] = baseline_input.data[d] + alpha * delta[i].data[d];
      }
      blocks[i] = tape.leaf(std::move(interp));
      h0_nodes[i] = tape.concat(blocks[i], query_node);
    }
    const NodeId logits = logits_from_h0_on_tape(tape, mt, h0_nodes);
    const NodeId fc = tape.sum(tape.mul(logits, tape.constant(onehot)));
    tape.backward(fc);
    for (std::size_t i = 0; i < len; ++i) {
      const Tensor& g = tape.grad(blocks[i]);
      double dot = 0.0;
      for (std::size_t d = 0; d < e; ++d) dot += delta[i].data[d] * g.data[d];
      result.signed_sums[i] += dot;
    }
  }
  std::vector<double> raw(len);
  for (std::size_t i = 0; i < len; ++i) {
    result.signed_sums[i] /= static_cast<double>(steps);
    raw[i] = std::abs(result.signed_sums[i]);
  }
  result.attribution = Attribution::from_raw(std::move(raw));
  result.target_value = trace.logits.data[static_cast<std::size_t>(target)];

  std::vector<Tensor> h0_base(len);
  for (std::size_t i = 0; i < len; ++i) {
    Tensor h0 = Tensor::zeros({3 * e});
    for (std::size_t d = 0; d < e; ++d) h0.data[d] = baseline_input.data[d];
    for (std::size_t d = 0; d < 2 * e; ++d) h0.data[e + d] = query.data[d];
    h0_base[i] = std::move(h0);
  }
  const ModelTrace base_trace = forward_from_h0(model, std::move(h0_base));
  result.baseline_value =
      base_trace.logits.data[static_cast<std::size_t>(target)];
  return result;
}

IgResult integrated_gradients(const ModelParams& model,
                              const ToyExample& example, std::size_t steps) {
  return integrated_gradients(model, example,
                              Tensor::zeros({model.embed_dim()}), steps);
}

// ---------------------------------------------------------------------------
// Score-function-trained Bernoulli gates.
// ---------------------------------------------------------------------------

ReinforceResult reinforce_gates(const ModelParams& model,
                                const ToyExample& example,
                                const ReinforceConfig& config) {
  const ModelTrace trace = forward(model, example);
  const std::size_t len = example.length();
  const std::size_t block =
      config.mode == MaskMode::input ? model.embed_dim() : model.bottleneck();

  std::vector<double> logits(len, config.location_init);
  Tensor baseline = Tensor::zeros({block});
  double lambda = 0.0;
  double ma = 0.0;
  Adam adam(len + block, config.lr);
  Rng rng = Rng::derive(config.seed, /*tag=*/0x72666e63);  // "rfnc"

  ReinforceResult result;
  std::vector<double> flat(len + block), grads(len + block);
  std::vector<double> probs(len), z(len);
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t i = 0; i < len; ++i) {
      probs[i] = kernels::sigmoid(logits[i]);
      z[i] = rng.uniform() < probs[i] ? 1.0 : 0.0;
    }

    // Pathwise divergence and baseline gradient through the sampled mask.
    Tape tape;
    const ModelOnTape mt = upload_model(tape, model, /*trainable=*/false);
    const NodeId baseline_node = tape.leaf(baseline);
    const NodeId qn = tape.embedding(
        mt.embeddings, static_cast<std::size_t>(example.query_n));
    const NodeId qm = tape.embedding(
        mt.embeddings, static_cast<std::size_t>(example.query_m));
    const NodeId query = tape.concat(qn, qm);
    std::vector<NodeId> digit_nodes(len), h1_nodes(len), gate_nodes(len);
    for (std::size_t i = 0; i < len; ++i) {
      digit_nodes[i] = tape.embedding(
          mt.embeddings, static_cast<std::size_t>(example.digits[i]));
      h1_nodes[i] = tape.constant(trace.h1[i]);
      gate_nodes[i] = tape.constant(z[i]);
    }
    const NodeId logits_hat = masked_logits_on_tape(
        tape, mt, config.mode, digit_nodes, query, h1_nodes, gate_nodes,
        baseline_node, block);
    const NodeId kl =
        kl_to_reference_on_tape(tape, trace.class_probs, logits_hat);
    const double kl_value = tape.value(kl).data[0];
    if (!std::isfinite(kl_value)) {
      throw std::runtime_error("reinforce_gates: non-finite loss at step " +
                               std::to_string(step));
    }
    tape.backward(kl);
    result.kl_trace.push_back(kl_value);

    // Expected open count descends analytically; the constraint term uses
    // the score function with the moving average as control variate.
    for (std::size_t i = 0; i < len; ++i) {
      const double grad_l0 = probs[i] * (1.0 - probs[i]);
      const double grad_kl = (kl_value - ma) * (z[i] - probs[i]);
      grads[i] = grad_l0 + lambda * grad_kl;
      flat[i] = logits[i];
    }
    const Tensor& gb = tape.grad(baseline_node);
    for (std::size_t j = 0; j < block; ++j) {
      grads[len + j] = lambda * gb.data[j];
      flat[len + j] = baseline.data[j];
    }
    adam.step(flat.data(), grads.data());
    for (std::size_t i = 0; i < len; ++i) logits[i] = flat[i];
    for (std::size_t j = 0; j < block; ++j) baseline.data[j] = flat[len + j];

    ma = config.ma_decay * ma + (1.0 - config.ma_decay) * kl_value;
    lambda =
        std::max(0.0, lambda + config.lr_lambda * (kl_value - config.margin));
  }
  result.logits = logits;
  result.keep_probs.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    result.keep_probs[i] = kernels::sigmoid(logits[i]);
  }
  result.baseline = std::move(baseline);
  result.lambda = lambda;
  return result;
}

}  // namespace gatelab
