// SPDX-License-Identifier: Apache-2.0

#include "gatelab/diffmask.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "gatelab/checkpoint.hpp"
#include "gatelab/optim.hpp"

namespace gatelab {

// ---------------------------------------------------------------------------
// Parameters.
// ---------------------------------------------------------------------------

namespace {

void check_probe_shape(const std::string& name, const Tensor& t,
                       const std::vector<std::size_t>& want) {
  if (t.shape != want) {
    throw std::invalid_argument("ProbeParams: tensor '" + name +
                                "': expected shape " + shape_str(want) +
                                ", found " + shape_str(t.shape));
  }
}

}  // namespace

void ProbeParams::validate() const {
  if (w1_0.rank() != 2 || w1_0.shape[0] != w1_0.shape[1] ||
      w1_0.shape[0] == 0 || w1_0.shape[0] % 3 != 0) {
    throw std::invalid_argument(
        "ProbeParams: tensor 'w1_0': expected square shape (3E, 3E), found " +
        shape_str(w1_0.shape));
  }
  if (w1_1.rank() != 2 || w1_1.shape[0] != w1_0.shape[0]) {
    throw std::invalid_argument(
        "ProbeParams: tensor 'w1_1': expected shape (3E, B), found " +
        shape_str(w1_1.shape));
  }
  const std::size_t d = input_dim();
  const std::size_t b = bottleneck();
  check_probe_shape("w2_0", w2_0, {2 * d});
  check_probe_shape("bias_0", bias_0, {});
  check_probe_shape("w2_1", w2_1, {d + b});
  check_probe_shape("bias_1", bias_1, {});
  check_probe_shape("input_baseline", input_baseline, {d});
  check_probe_shape("hidden_baseline", hidden_baseline, {b});
  hc.validate();
  if (lambda < 0.0 || !std::isfinite(lambda)) {
    throw std::invalid_argument("ProbeParams: lambda must be >= 0");
  }
  if (margin < 0.0 || !std::isfinite(margin)) {
    throw std::invalid_argument("ProbeParams: margin must be >= 0");
  }
  for (const auto& [name, t] : named()) {
    if (!t->all_finite()) {
      throw std::invalid_argument(std::string("ProbeParams: tensor '") + name +
                                  "' contains non-finite values");
    }
  }
}

std::vector<std::pair<const char*, const Tensor*>> ProbeParams::named() const {
  return {
      {"w1_0", &w1_0},
      {"w2_0", &w2_0},
      {"bias_0", &bias_0},
      {"w1_1", &w1_1},
      {"w2_1", &w2_1},
      {"bias_1", &bias_1},
      {"input_baseline", &input_baseline},
      {"hidden_baseline", &hidden_baseline},
  };
}

std::vector<std::pair<const char*, Tensor*>> ProbeParams::named() {
  std::vector<std::pair<const char*, Tensor*>> out;
  for (auto& [name, t] : std::as_const(*this).named()) {
    out.emplace_back(name, const_cast<Tensor*>(t));
  }
  return out;
}

ProbeParams init_probe(const ModelParams& model, const ProbeConfig& config) {
  config.hc.validate();
  const std::size_t d = model.input_dim();
  const std::size_t b = model.bottleneck();
  ProbeParams p;
  p.mode = config.mode;
  // Zero weights plus a positive bias: every gate starts open, so the
  // constraint term starts near zero and sparsity is learned from there.
  p.w1_0 = Tensor::zeros({d, d});
  p.w2_0 = Tensor::zeros({2 * d});
  p.bias_0 = Tensor::scalar(config.bias_init);
  p.w1_1 = Tensor::zeros({d, b});
  p.w2_1 = Tensor::zeros({d + b});
  p.bias_1 = Tensor::scalar(config.bias_init);
  p.input_baseline = Tensor::zeros({d});
  p.hidden_baseline = Tensor::zeros({b});
  p.hc = config.hc;
  p.lambda = 0.0;
  p.margin = config.margin;
  return p;
}

// ---------------------------------------------------------------------------
// Plain probe evaluation. Mirrors the tape builders operation for operation;
// a unit test pins bit-equality.
// ---------------------------------------------------------------------------

namespace {

double plain_raw_location(const Tensor& w1, const Tensor& w2,
                          const Tensor& bias, const Tensor& x,
                          const Tensor& h) {
  const std::size_t k = x.size();
  const std::size_t n = h.size();
  // x^T W1 h
  std::vector<double> t1(n);
  kernels::matmul(x.data.data(), w1.data.data(), t1.data(), 1, k, n);
  double bilinear = 0.0;
  kernels::matmul(t1.data(), h.data.data(), &bilinear, 1, n, 1);
  // W2 . [x; h]
  std::vector<double> cat(k + n);
  for (std::size_t i = 0; i < k; ++i) cat[i] = x.data[i];
  for (std::size_t i = 0; i < n; ++i) cat[k + i] = h.data[i];
  double lin = 0.0;
  kernels::matmul(cat.data(), w2.data.data(), &lin, 1, k + n, 1);
  return (bilinear + lin) + bias.data[0];
}

void check_trace_for_probe(const ProbeParams& probe, const ModelTrace& trace) {
  if (trace.h0.size() != trace.h1.size() || trace.h0.empty()) {
    throw std::invalid_argument("probe: trace is missing h0/h1 states");
  }
  if (trace.h0.front().size() != probe.input_dim() ||
      trace.h1.front().size() != probe.bottleneck()) {
    throw std::invalid_argument(
        "probe: trace dimensions do not match probe weights");
  }
}

std::array<std::vector<double>, 2> raw_locations(const ProbeParams& probe,
                                                 const ModelTrace& trace) {
  check_trace_for_probe(probe, trace);
  const std::size_t len = trace.h0.size();
  std::array<std::vector<double>, 2> raw;
  raw[0].resize(len);
  raw[1].resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    raw[0][i] = plain_raw_location(probe.w1_0, probe.w2_0, probe.bias_0,
                                   trace.h0[i], trace.h0[i]);
    raw[1][i] = plain_raw_location(probe.w1_1, probe.w2_1, probe.bias_1,
                                   trace.h0[i], trace.h1[i]);
  }
  return raw;
}

std::array<std::vector<double>, 2> averaged_locations(
    const std::array<std::vector<double>, 2>& raw) {
  std::array<std::vector<double>, 2> loc;
  loc[0] = raw[0];
  loc[1].resize(raw[1].size());
  for (std::size_t i = 0; i < raw[1].size(); ++i) {
    loc[1][i] = (raw[1][i] + raw[0][i]) * 0.5;
  }
  return loc;
}

}  // namespace

std::vector<double> probe_locations(const ProbeParams& probe,
                                    const ModelTrace& trace, int layer) {
  if (layer < 0 || layer > 1) {
    throw std::invalid_argument("probe_locations: layer must be 0 or 1, got " +
                                std::to_string(layer));
  }
  const auto raw = raw_locations(probe, trace);
  return averaged_locations(raw)[static_cast<std::size_t>(layer)];
}

GateSet sample_gate_set(const ProbeParams& probe, const ModelTrace& trace,
                        Rng& rng) {
  GateSet gs;
  gs.raw_locations = raw_locations(probe, trace);
  gs.locations = averaged_locations(gs.raw_locations);
  const std::size_t len = gs.locations[0].size();
  gs.votes[0].resize(len);
  gs.votes[1].resize(len);
  gs.gates.resize(len);
  for (std::size_t i = 0; i < len; ++i) {
    gs.votes[0][i] =
        sample_gate(probe.hc, gs.locations[0][i], rng.uniform()).gate;
    gs.votes[1][i] =
        sample_gate(probe.hc, gs.locations[1][i], rng.uniform()).gate;
    gs.gates[i] = gs.votes[0][i] * gs.votes[1][i];
  }
  return gs;
}

std::vector<double> aggregate_votes(
    const std::array<std::vector<double>, 2>& votes, int layer_limit) {
  if (layer_limit < 0 || layer_limit > 1) {
    throw std::invalid_argument("aggregate_votes: layer limit must be 0 or 1");
  }
  std::vector<double> z = votes[0];
  if (layer_limit >= 1) {
    if (votes[1].size() != z.size()) {
      throw std::invalid_argument("aggregate_votes: vote length mismatch");
    }
    for (std::size_t i = 0; i < z.size(); ++i) z[i] *= votes[1][i];
  }
  return z;
}

std::vector<Tensor> mask_input(const ModelTrace& trace,
                               std::span<const double> gates,
                               const Tensor& input_baseline) {
  if (trace.h0.size() != gates.size() || trace.h0.empty()) {
    throw std::invalid_argument("mask_input: one gate per position required");
  }
  const std::size_t d = trace.h0.front().size();
  if (input_baseline.size() != d) {
    throw std::invalid_argument(
        "mask_input: baseline dimension " +
        std::to_string(input_baseline.size()) + " does not match input " +
        std::to_string(d));
  }
  const std::size_t e = d / 3;  // digit block; query block is never masked
  std::vector<Tensor> masked;
  masked.reserve(trace.h0.size());
  for (std::size_t i = 0; i < trace.h0.size(); ++i) {
    const double z = gates[i];
    Tensor x = trace.h0[i];
    const double keep = 1.0 - z;
    for (std::size_t j = 0; j < e; ++j) {
      x.data[j] = z * trace.h0[i].data[j] + keep * input_baseline.data[j];
    }
    masked.push_back(std::move(x));
  }
  return masked;
}

ModelTrace masked_forward_input(const ModelParams& model,
                                const ModelTrace& trace,
                                std::span<const double> gates,
                                const Tensor& input_baseline) {
  return forward_from_h0(model, mask_input(trace, gates, input_baseline));
}

std::vector<Tensor> mask_hidden(const ModelTrace& trace,
                                std::span<const double> gates,
                                const Tensor& hidden_baseline) {
  if (trace.h1.size() != gates.size() || trace.h1.empty()) {
    throw std::invalid_argument("mask_hidden: one gate per position required");
  }
  const std::size_t b = trace.h1.front().size();
  if (hidden_baseline.size() != b) {
    throw std::invalid_argument(
        "mask_hidden: baseline dimension " +
        std::to_string(hidden_baseline.size()) +
        " does not match bottleneck " + std::to_string(b));
  }
  std::vector<Tensor> masked;
  masked.reserve(trace.h1.size());
  for (std::size_t i = 0; i < trace.h1.size(); ++i) {
    const double z = gates[i];
    const double keep = 1.0 - z;
    Tensor h = trace.h1[i];
    for (std::size_t j = 0; j < b; ++j) {
      h.data[j] = z * trace.h1[i].data[j] + keep * hidden_baseline.data[j];
    }
    masked.push_back(std::move(h));
  }
  return masked;
}

ModelTrace masked_forward_hidden(const ModelParams& model,
                                 const ModelTrace& trace,
                                 std::span<const double> gates,
                                 const Tensor& hidden_baseline) {
  return forward_from_h1(model, mask_hidden(trace, gates, hidden_baseline));
}

// ---------------------------------------------------------------------------
// Tape builders.
// ---------------------------------------------------------------------------

ProbeOnTape upload_probe(Tape& tape, const ProbeParams& probe,
                         bool trainable) {
  auto up = [&](Tensor t) {
    return trainable ? tape.leaf(std::move(t)) : tape.constant(std::move(t));
  };
  ProbeOnTape p;
  p.w1_0 = up(probe.w1_0);
  p.w2_0 = up(probe.w2_0);
  p.bias_0 = up(probe.bias_0);
  p.w1_1 = up(probe.w1_1);
  p.w2_1 = up(probe.w2_1);
  p.bias_1 = up(probe.bias_1);
  // Only the digit block of the input baseline is learnable; upload it as
  // its own node so gradients map back onto the block.
  const std::size_t e = probe.embed_dim();
  Tensor block = Tensor::zeros({e});
  for (std::size_t j = 0; j < e; ++j) block.data[j] = probe.input_baseline[j];
  p.input_baseline = up(std::move(block));
  p.hidden_baseline = up(probe.hidden_baseline);
  return p;
}

NodeId probe_location_on_tape(Tape& tape, NodeId w1, NodeId w2, NodeId bias,
                              NodeId x, NodeId h) {
  const NodeId bilinear = tape.matmul(tape.matmul(x, w1), h);
  const NodeId lin = tape.matmul(tape.concat(x, h), w2);
  return tape.add(tape.add(bilinear, lin), bias);
}

NodeId kl_to_reference_on_tape(Tape& tape, const Tensor& y_ref,
                               NodeId logits) {
  Tensor logy = Tensor::zeros(y_ref.shape);
  for (std::size_t i = 0; i < y_ref.size(); ++i) {
    logy.data[i] = y_ref.data[i] > 0.0 ? std::log(y_ref.data[i]) : 0.0;
  }
  const NodeId q = tape.log_softmax(logits);
  const NodeId y = tape.constant(y_ref);
  return tape.sum(tape.mul(y, tape.sub(tape.constant(std::move(logy)), q)));
}

NodeId blend_on_tape(Tape& tape, NodeId gate_scalar, NodeId vec,
                     NodeId baseline, std::size_t n) {
  const NodeId zrow = tape.reshape(gate_scalar, {1});
  const NodeId zb = tape.matmul(zrow, tape.constant(Tensor::full({1, n}, 1.0)));
  const NodeId keep = tape.sub(tape.constant(Tensor::full({n}, 1.0)), zb);
  return tape.add(tape.mul(zb, vec), tape.mul(keep, baseline));
}

namespace {

// One Hard Concrete draw on the tape for a scalar location node. Identical
// arithmetic to the plain sample_gate.
NodeId sample_gate_scalar_on_tape(Tape& tape, const HardConcrete& hc,
                                  NodeId location, double u) {
  const NodeId pre =
      tape.scale(tape.shift(location, noise_logit(u)), 1.0 / hc.temperature);
  const NodeId s = tape.min_const(tape.sigmoid(pre), kOneMinusEps);
  const NodeId stretched =
      tape.shift(tape.scale(s, hc.stretch_r - hc.stretch_l), hc.stretch_l);
  return tape.min_const(tape.max_const(stretched, 0.0), 1.0);
}

// sigmoid(location - open_shift), the per-gate open probability.
NodeId open_prob_scalar_on_tape(Tape& tape, const HardConcrete& hc,
                                NodeId location) {
  return tape.sigmoid(tape.shift(location, -hc.open_shift()));
}

}  // namespace

NodeId masked_logits_on_tape(Tape& tape, const ModelOnTape& model,
                             MaskMode mode, std::span<const NodeId> digit_nodes,
                             NodeId query_node,
                             std::span<const NodeId> h1_nodes,
                             std::span<const NodeId> gates, NodeId baseline,
                             std::size_t block_size) {
  std::vector<NodeId> h1_masked;
  h1_masked.reserve(gates.size());
  if (mode == MaskMode::input) {
    for (std::size_t i = 0; i < gates.size(); ++i) {
      const NodeId blended =
          blend_on_tape(tape, gates[i], digit_nodes[i], baseline, block_size);
      const NodeId x_hat = tape.concat(blended, query_node);
      h1_masked.push_back(ffnn_on_tape(tape, model, x_hat));
    }
  } else {
    for (std::size_t i = 0; i < gates.size(); ++i) {
      h1_masked.push_back(
          blend_on_tape(tape, gates[i], h1_nodes[i], baseline, block_size));
    }
  }
  return logits_from_h1_on_tape(tape, model, h1_masked);
}

// ---------------------------------------------------------------------------
// Amortized training.
// ---------------------------------------------------------------------------

ProbeTrainResult train_probe(const ModelParams& model,
                             const ToyDataset& dataset,
                             const ProbeConfig& config) {
  if (dataset.train_count == 0) {
    throw std::invalid_argument("train_probe: dataset has no train split");
  }
  model.validate();
  ProbeParams probe = init_probe(model, config);
  probe.margin = config.margin;

  // The model is frozen, so per-example conditioning states are fixed;
  // cache the small ones (h1, reference distribution) up front.
  struct Cached {
    std::vector<Tensor> h1;
    Tensor class_probs;
  };
  std::vector<Cached> cache(dataset.train_count);
  for (std::size_t i = 0; i < dataset.train_count; ++i) {
    ModelTrace trace = forward(model, dataset.examples[i]);
    cache[i].h1 = std::move(trace.h1);
    cache[i].class_probs = std::move(trace.class_probs);
  }

  const std::size_t e = probe.embed_dim();
  const std::size_t b = probe.bottleneck();
  const std::size_t slice =
      config.mode == MaskMode::input ? e : b;  // learned baseline block
  const std::size_t flat_count = probe.w1_0.size() + probe.w2_0.size() + 1 +
                                 probe.w1_1.size() + probe.w2_1.size() + 1 +
                                 slice;
  Adam adam(flat_count, config.lr);
  Rng shuffle_rng = Rng::derive(config.seed, /*tag=*/0x70736866);  // "pshf"
  Rng noise_rng = Rng::derive(config.seed, /*tag=*/0x706e6f69);    // "pnoi"

  std::vector<std::size_t> order(dataset.train_count);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> flat(flat_count);
  std::vector<double> grads(flat_count);
  double lambda = 0.0;

  ProbeTrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double epoch_kl = 0.0;
    double epoch_l0 = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch, ++step) {
      const std::size_t stop = std::min(order.size(), start + config.batch);
      const std::size_t count = stop - start;
      Tape tape;
      const ModelOnTape mt = upload_model(tape, model, /*trainable=*/false);
      const ProbeOnTape pt = upload_probe(tape, probe, /*trainable=*/true);
      NodeId total = tape.constant(0.0);
      double batch_kl = 0.0;
      for (std::size_t bi = start; bi < stop; ++bi) {
        const ToyExample& ex = dataset.examples[order[bi]];
        const Cached& c = cache[order[bi]];
        const std::size_t len = ex.length();
        // Conditioning states as constants.
        const NodeId qn = tape.embedding(
            mt.embeddings, static_cast<std::size_t>(ex.query_n));
        const NodeId qm = tape.embedding(
            mt.embeddings, static_cast<std::size_t>(ex.query_m));
        const NodeId query = tape.concat(qn, qm);
        std::vector<NodeId> digit_nodes(len), h0_nodes(len), h1_nodes(len);
        for (std::size_t i = 0; i < len; ++i) {
          digit_nodes[i] = tape.embedding(
              mt.embeddings, static_cast<std::size_t>(ex.digits[i]));
          h0_nodes[i] = tape.concat(digit_nodes[i], query);
          h1_nodes[i] = tape.constant(c.h1[i]);
        }
        // Per-position locations, votes, gates, open probabilities.
        std::vector<NodeId> gates(len);
        NodeId l0 = tape.constant(0.0);
        for (std::size_t i = 0; i < len; ++i) {
          const NodeId raw0 =
              probe_location_on_tape(tape, pt.w1_0, pt.w2_0, pt.bias_0,
                                     h0_nodes[i], h0_nodes[i]);
          const NodeId raw1 =
              probe_location_on_tape(tape, pt.w1_1, pt.w2_1, pt.bias_1,
                                     h0_nodes[i], h1_nodes[i]);
          const NodeId loc0 = raw0;
          const NodeId loc1 = tape.scale(tape.add(raw1, raw0), 0.5);
          const double u0 = noise_rng.uniform();
          const double u1 = noise_rng.uniform();
          const NodeId v0 = sample_gate_scalar_on_tape(tape, config.hc, loc0, u0);
          const NodeId v1 = sample_gate_scalar_on_tape(tape, config.hc, loc1, u1);
          gates[i] = tape.mul(v0, v1);
          l0 = tape.add(
              l0, tape.mul(open_prob_scalar_on_tape(tape, config.hc, loc0),
                           open_prob_scalar_on_tape(tape, config.hc, loc1)));
        }
        const NodeId baseline = config.mode == MaskMode::input
                                    ? pt.input_baseline
                                    : pt.hidden_baseline;
        const NodeId logits_hat = masked_logits_on_tape(
            tape, mt, config.mode, digit_nodes, query, h1_nodes, gates,
            baseline, slice);
        const NodeId kl = kl_to_reference_on_tape(tape, c.class_probs,
                                                  logits_hat);
        const NodeId obj =
            tape.add(l0, tape.scale(tape.shift(kl, -config.margin), lambda));
        total = tape.add(total, obj);
        batch_kl += tape.value(kl).data[0];
        epoch_l0 += tape.value(l0).data[0];
      }
      const NodeId loss =
          tape.scale(total, 1.0 / static_cast<double>(count));
      const double loss_value = tape.value(loss).data[0];
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("train_probe: non-finite loss at step " +
                                 std::to_string(step));
      }
      tape.backward(loss);

      // Flatten parameters and gradients in a fixed order, step, write back.
      auto flatten = [&](auto&& get, std::vector<double>& out) {
        out.clear();
        auto append = [&](const Tensor& t) {
          out.insert(out.end(), t.data.begin(), t.data.end());
        };
        append(get(pt.w1_0));
        append(get(pt.w2_0));
        append(get(pt.bias_0));
        append(get(pt.w1_1));
        append(get(pt.w2_1));
        append(get(pt.bias_1));
        append(get(config.mode == MaskMode::input ? pt.input_baseline
                                                  : pt.hidden_baseline));
      };
      flatten([&](NodeId id) -> const Tensor& { return tape.value(id); },
              flat);
      flatten([&](NodeId id) -> const Tensor& { return tape.grad(id); },
              grads);
      adam.step(flat.data(), grads.data());
      std::size_t pos = 0;
      auto scatter = [&](Tensor& t) {
        for (double& v : t.data) v = flat[pos++];
      };
      scatter(probe.w1_0);
      scatter(probe.w2_0);
      scatter(probe.bias_0);
      scatter(probe.w1_1);
      scatter(probe.w2_1);
      scatter(probe.bias_1);
      if (config.mode == MaskMode::input) {
        for (std::size_t j = 0; j < e; ++j) {
          probe.input_baseline.data[j] = flat[pos++];
        }
      } else {
        scatter(probe.hidden_baseline);
      }

      const double mean_kl = batch_kl / static_cast<double>(count);
      lambda = std::max(0.0, lambda + config.lr_lambda *
                                           (mean_kl - config.margin));
      epoch_kl += batch_kl;
    }
    ProbeEpochStats stats;
    stats.mean_kl = epoch_kl / static_cast<double>(order.size());
    stats.mean_l0 = epoch_l0 / static_cast<double>(order.size());
    stats.lambda = lambda;
    result.epochs.push_back(stats);
  }
  probe.lambda = lambda;
  probe.validate();
  result.probe = std::move(probe);
  return result;
}

// ---------------------------------------------------------------------------
// Attribution.
// ---------------------------------------------------------------------------

Attribution attribute(const ModelParams& model, const ProbeParams& probe,
                      const ToyExample& example, int layer,
                      std::size_t samples, std::uint64_t seed) {
  if (layer < 0 || layer > 1) {
    throw std::invalid_argument("attribute: layer must be 0 or 1");
  }
  if (samples == 0) {
    throw std::invalid_argument("attribute: need at least one sample");
  }
  const ModelTrace trace = forward(model, example);
  const auto raw = raw_locations(probe, trace);
  const auto loc = averaged_locations(raw);
  const std::size_t len = example.length();
  std::vector<double> acc(len, 0.0);
  Rng rng = Rng::derive(seed, /*tag=*/0x61747472);  // "attr"
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < len; ++i) {
      const double v0 = sample_gate(probe.hc, loc[0][i], rng.uniform()).gate;
      const double v1 = sample_gate(probe.hc, loc[1][i], rng.uniform()).gate;
      acc[i] += layer == 0 ? v0 : v0 * v1;
    }
  }
  for (double& v : acc) v /= static_cast<double>(samples);
  return Attribution::from_raw(std::move(acc));
}

Attribution attribute_locations(std::span<const double> locations,
                                const HardConcrete& hc, std::size_t samples,
                                std::uint64_t seed) {
  if (samples == 0 || locations.empty()) {
    throw std::invalid_argument(
        "attribute_locations: need samples and locations");
  }
  std::vector<double> acc(locations.size(), 0.0);
  Rng rng = Rng::derive(seed, /*tag=*/0x61747472);  // "attr"
  for (std::size_t s = 0; s < samples; ++s) {
    for (std::size_t i = 0; i < locations.size(); ++i) {
      acc[i] += sample_gate(hc, locations[i], rng.uniform()).gate;
    }
  }
  for (double& v : acc) v /= static_cast<double>(samples);
  return Attribution::from_raw(std::move(acc));
}

// ---------------------------------------------------------------------------
// Non-amortized variant.
// ---------------------------------------------------------------------------

NonAmortizedResult train_gates_nonamortized(const ModelParams& model,
                                            const ToyExample& example,
                                            const NonAmortizedConfig& config) {
  config.hc.validate();
  const ModelTrace trace = forward(model, example);
  const std::size_t len = example.length();
  const std::size_t block =
      config.mode == MaskMode::input ? model.embed_dim() : model.bottleneck();

  Tensor locations = Tensor::full({len}, config.location_init);
  Tensor baseline = Tensor::zeros({block});
  double lambda = 0.0;
  Adam adam(len + block, config.lr);
  Rng noise_rng = Rng::derive(config.seed, /*tag=*/0x6e616d6f);  // "namo"

  NonAmortizedResult result;
  std::vector<double> flat(len + block), grads(len + block);
  for (std::size_t step = 0; step < config.steps; ++step) {
    Tape tape;
    const ModelOnTape mt = upload_model(tape, model, /*trainable=*/false);
    const NodeId loc_node = tape.leaf(locations);
    const NodeId baseline_node = tape.leaf(baseline);

    const NodeId qn =
        tape.embedding(mt.embeddings, static_cast<std::size_t>(example.query_n));
    const NodeId qm =
        tape.embedding(mt.embeddings, static_cast<std::size_t>(example.query_m));
    const NodeId query = tape.concat(qn, qm);
    std::vector<NodeId> digit_nodes(len), h1_nodes(len);
    for (std::size_t i = 0; i < len; ++i) {
      digit_nodes[i] = tape.embedding(
          mt.embeddings, static_cast<std::size_t>(example.digits[i]));
      h1_nodes[i] = tape.constant(trace.h1[i]);
    }

    std::vector<double> noise(len);
    for (double& u : noise) u = noise_rng.uniform();
    const NodeId gates_vec =
        sample_gates_on_tape(tape, config.hc, loc_node, noise);
    std::vector<NodeId> gates(len);
    for (std::size_t i = 0; i < len; ++i) {
      Tensor onehot = Tensor::zeros({len});
      onehot.data[i] = 1.0;
      gates[i] =
          tape.sum(tape.mul(gates_vec, tape.constant(std::move(onehot))));
    }
    const NodeId logits_hat = masked_logits_on_tape(
        tape, mt, config.mode, digit_nodes, query, h1_nodes, gates,
        baseline_node, block);
    const NodeId kl =
        kl_to_reference_on_tape(tape, trace.class_probs, logits_hat);
    const NodeId l0 = expected_l0_on_tape(tape, config.hc, loc_node);
    const NodeId obj =
        tape.add(l0, tape.scale(tape.shift(kl, -config.margin), lambda));
    const double obj_value = tape.value(obj).data[0];
    if (!std::isfinite(obj_value)) {
      throw std::runtime_error(
          "train_gates_nonamortized: non-finite loss at step " +
          std::to_string(step));
    }
    tape.backward(obj);

    const double kl_value = tape.value(kl).data[0];
    result.kl_trace.push_back(kl_value);
    for (std::size_t i = 0; i < len; ++i) flat[i] = locations.data[i];
    for (std::size_t j = 0; j < block; ++j) flat[len + j] = baseline.data[j];
    const Tensor& gl = tape.grad(loc_node);
    const Tensor& gb = tape.grad(baseline_node);
    for (std::size_t i = 0; i < len; ++i) grads[i] = gl.data[i];
    for (std::size_t j = 0; j < block; ++j) grads[len + j] = gb.data[j];
    adam.step(flat.data(), grads.data());
    for (std::size_t i = 0; i < len; ++i) locations.data[i] = flat[i];
    for (std::size_t j = 0; j < block; ++j) baseline.data[j] = flat[len + j];
    lambda = std::max(0.0, lambda + config.lr_lambda * (kl_value - config.margin));
  }
  result.locations.assign(locations.data.begin(), locations.data.end());
  result.baseline = std::move(baseline);
  result.lambda = lambda;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpointing.
// ---------------------------------------------------------------------------

void save_probe(const ProbeParams& probe, const std::filesystem::path& path) {
  probe.validate();
  TensorManifest manifest;
  for (const auto& [name, t] : probe.named()) {
    manifest.tensors.emplace_back(name, *t);
  }
  manifest.scalars["lambda"] = probe.lambda;
  manifest.scalars["margin"] = probe.margin;
  manifest.scalars["temperature"] = probe.hc.temperature;
  manifest.scalars["stretch_l"] = probe.hc.stretch_l;
  manifest.scalars["stretch_r"] = probe.hc.stretch_r;
  manifest.scalars["mode"] = probe.mode == MaskMode::input ? 0.0 : 1.0;
  save_manifest(manifest, path);
}

ProbeParams load_probe(const std::filesystem::path& path) {
  const TensorManifest manifest = load_manifest(path);
  ProbeParams probe;
  for (auto& [name, t] : probe.named()) *t = manifest.require(name);
  probe.lambda = manifest.require_scalar("lambda");
  probe.margin = manifest.require_scalar("margin");
  probe.hc.temperature = manifest.require_scalar("temperature");
  probe.hc.stretch_l = manifest.require_scalar("stretch_l");
  probe.hc.stretch_r = manifest.require_scalar("stretch_r");
  probe.mode = manifest.require_scalar("mode") == 0.0 ? MaskMode::input
                                                      : MaskMode::hidden;
  try {
    probe.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("load_probe: " + path.string() + ": " + e.what());
  }
  return probe;
}

}  // namespace gatelab
