// SPDX-License-Identifier: Apache-2.0

#include "gatelab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "gatelab/optim.hpp"
#include "gatelab/rng.hpp"

namespace gatelab {

namespace {

void check_shape(const std::string& name, const Tensor& t,
                 const std::vector<std::size_t>& want) {
  if (t.shape != want) {
    throw std::invalid_argument("ModelParams: tensor '" + name +
                                "': expected shape " + shape_str(want) +
                                ", found " + shape_str(t.shape));
  }
}

}  // namespace

void ModelParams::validate() const {
  if (embeddings.rank() != 2 || embeddings.shape[0] != 10) {
    throw std::invalid_argument(
        "ModelParams: tensor 'embeddings': expected shape (10, E), found " +
        shape_str(embeddings.shape));
  }
  if (ffnn_bias.rank() != 1 || gru_reset_b.rank() != 1) {
    throw std::invalid_argument("ModelParams: biases must be rank 1");
  }
  const std::size_t e = embed_dim();
  const std::size_t b = bottleneck();
  const std::size_t h = hidden();
  check_shape("ffnn_weight", ffnn_weight, {3 * e, b});
  check_shape("ffnn_bias", ffnn_bias, {b});
  check_shape("gru_reset_w", gru_reset_w, {b, h});
  check_shape("gru_reset_u", gru_reset_u, {h, h});
  check_shape("gru_reset_b", gru_reset_b, {h});
  check_shape("gru_update_w", gru_update_w, {b, h});
  check_shape("gru_update_u", gru_update_u, {h, h});
  check_shape("gru_update_b", gru_update_b, {h});
  check_shape("gru_cand_w", gru_cand_w, {b, h});
  check_shape("gru_cand_u", gru_cand_u, {h, h});
  check_shape("gru_cand_b", gru_cand_b, {h});
  check_shape("cls_weight", cls_weight, {h, 2});
  check_shape("cls_bias", cls_bias, {2});
  for (const auto& [name, t] : named()) {
    if (!t->all_finite()) {
      throw std::invalid_argument(std::string("ModelParams: tensor '") + name +
                                  "' contains non-finite values");
    }
  }
}

std::vector<std::pair<const char*, const Tensor*>> ModelParams::named() const {
  return {
      {"embeddings", &embeddings},
      {"ffnn_weight", &ffnn_weight},
      {"ffnn_bias", &ffnn_bias},
      {"gru_reset_w", &gru_reset_w},
      {"gru_reset_u", &gru_reset_u},
      {"gru_reset_b", &gru_reset_b},
      {"gru_update_w", &gru_update_w},
      {"gru_update_u", &gru_update_u},
      {"gru_update_b", &gru_update_b},
      {"gru_cand_w", &gru_cand_w},
      {"gru_cand_u", &gru_cand_u},
      {"gru_cand_b", &gru_cand_b},
      {"cls_weight", &cls_weight},
      {"cls_bias", &cls_bias},
  };
}

std::vector<std::pair<const char*, Tensor*>> ModelParams::named() {
  std::vector<std::pair<const char*, Tensor*>> out;
  for (auto& [name, t] : std::as_const(*this).named()) {
    out.emplace_back(name, const_cast<Tensor*>(t));
  }
  return out;
}

namespace {

Tensor uniform_tensor(Rng& rng, std::vector<std::size_t> shape, double bound) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal_tensor(Rng& rng, std::vector<std::size_t> shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  Rng rng = Rng::derive(config.seed, /*tag=*/0x696e6974);  // "init"
  const std::size_t e = config.embed_dim;
  const std::size_t b = config.bottleneck;
  const std::size_t h = config.hidden;
  ModelParams p;
  p.embeddings = normal_tensor(rng, {10, e});
  const double ffnn_k = 1.0 / std::sqrt(static_cast<double>(3 * e));
  p.ffnn_weight = uniform_tensor(rng, {3 * e, b}, ffnn_k);
  p.ffnn_bias = uniform_tensor(rng, {b}, ffnn_k);
  const double gru_k = 1.0 / std::sqrt(static_cast<double>(h));
  p.gru_reset_w = uniform_tensor(rng, {b, h}, gru_k);
  p.gru_reset_u = uniform_tensor(rng, {h, h}, gru_k);
  p.gru_reset_b = uniform_tensor(rng, {h}, gru_k);
  p.gru_update_w = uniform_tensor(rng, {b, h}, gru_k);
  p.gru_update_u = uniform_tensor(rng, {h, h}, gru_k);
  p.gru_update_b = uniform_tensor(rng, {h}, gru_k);
  p.gru_cand_w = uniform_tensor(rng, {b, h}, gru_k);
  p.gru_cand_u = uniform_tensor(rng, {h, h}, gru_k);
  p.gru_cand_b = uniform_tensor(rng, {h}, gru_k);
  p.cls_weight = uniform_tensor(rng, {h, 2}, gru_k);
  p.cls_bias = uniform_tensor(rng, {2}, gru_k);
  return p;
}

// ---------------------------------------------------------------------------
// Plain forward. The arithmetic below is mirrored operation for operation by
// the tape builders further down; keep the two in sync (a unit test pins
// bit-equality of their outputs).
// ---------------------------------------------------------------------------

namespace {

// x (k) * w (k x n), then + b (n)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t k = x.size();
  const std::size_t n = w.shape[1];
  Tensor prod = Tensor::zeros({n});
  kernels::matmul(x.data.data(), w.data.data(), prod.data.data(), 1, k, n);
  Tensor out = Tensor::zeros({n});
  kernels::add(prod.data.data(), b.data.data(), out.data.data(), n);
  return out;
}

// (x (k) * w (k x n) + state (n) * u (n x n)) + b (n)
Tensor gate_preactivation(const Tensor& x, const Tensor& w, const Tensor& rec,
                          const Tensor& u, const Tensor& b) {
  const std::size_t n = b.size();
  Tensor wi = Tensor::zeros({n});
  kernels::matmul(x.data.data(), w.data.data(), wi.data.data(), 1, x.size(),
                  n);
  Tensor uh = Tensor::zeros({n});
  kernels::matmul(rec.data.data(), u.data.data(), uh.data.data(), 1,
                  rec.size(), n);
  Tensor s = Tensor::zeros({n});
  kernels::add(wi.data.data(), uh.data.data(), s.data.data(), n);
  Tensor out = Tensor::zeros({n});
  kernels::add(s.data.data(), b.data.data(), out.data.data(), n);
  return out;
}

}  // namespace

Tensor gru_cell(const ModelParams& params, const Tensor& input,
                const Tensor& state) {
  const std::size_t h = params.hidden();
  if (input.size() != params.bottleneck() || state.size() != h) {
    throw std::invalid_argument("gru_cell: input/state dimension mismatch");
  }
  Tensor r = gate_preactivation(input, params.gru_reset_w, state,
                                params.gru_reset_u, params.gru_reset_b);
  kernels::sigmoid(r.data.data(), r.data.data(), h);
  Tensor u = gate_preactivation(input, params.gru_update_w, state,
                                params.gru_update_u, params.gru_update_b);
  kernels::sigmoid(u.data.data(), u.data.data(), h);
  Tensor rh = Tensor::zeros({h});
  kernels::mul(r.data.data(), state.data.data(), rh.data.data(), h);
  Tensor c = gate_preactivation(input, params.gru_cand_w, rh,
                                params.gru_cand_u, params.gru_cand_b);
  kernels::tanh(c.data.data(), c.data.data(), h);
  // h' = (1 - u) . state + u . c
  Tensor ones = Tensor::full({h}, 1.0);
  Tensor keep = Tensor::zeros({h});
  kernels::sub(ones.data.data(), u.data.data(), keep.data.data(), h);
  Tensor left = Tensor::zeros({h});
  kernels::mul(keep.data.data(), state.data.data(), left.data.data(), h);
  Tensor right = Tensor::zeros({h});
  kernels::mul(u.data.data(), c.data.data(), right.data.data(), h);
  Tensor out = Tensor::zeros({h});
  kernels::add(left.data.data(), right.data.data(), out.data.data(), h);
  return out;
}

std::vector<Tensor> build_h0(const ModelParams& params,
                             const ToyExample& example) {
  validate_example(example);
  const std::size_t e = params.embed_dim();
  std::vector<Tensor> h0;
  h0.reserve(example.length());
  const double* emb = params.embeddings.data.data();
  for (int d : example.digits) {
    Tensor x = Tensor::zeros({3 * e});
    for (std::size_t j = 0; j < e; ++j) {
      x.data[j] = emb[static_cast<std::size_t>(d) * e + j];
      x.data[e + j] = emb[static_cast<std::size_t>(example.query_n) * e + j];
      x.data[2 * e + j] =
          emb[static_cast<std::size_t>(example.query_m) * e + j];
    }
    h0.push_back(std::move(x));
  }
  return h0;
}

Tensor ffnn_apply(const ModelParams& params, const Tensor& h0_i) {
  Tensor pre = linear(h0_i, params.ffnn_weight, params.ffnn_bias);
  kernels::tanh(pre.data.data(), pre.data.data(), pre.size());
  return pre;
}

ModelTrace forward_from_h1(const ModelParams& params, std::vector<Tensor> h1) {
  ModelTrace trace;
  trace.h1 = std::move(h1);
  Tensor state = Tensor::zeros({params.hidden()});
  trace.gru_states.reserve(trace.h1.size());
  for (const Tensor& x : trace.h1) {
    state = gru_cell(params, x, state);
    trace.gru_states.push_back(state);
  }
  trace.logits = linear(state, params.cls_weight, params.cls_bias);
  trace.class_probs = Tensor::zeros({2});
  kernels::softmax(trace.logits.data.data(), trace.class_probs.data.data(), 2);
  return trace;
}

ModelTrace forward_from_h0(const ModelParams& params, std::vector<Tensor> h0) {
  std::vector<Tensor> h1;
  h1.reserve(h0.size());
  for (const Tensor& x : h0) h1.push_back(ffnn_apply(params, x));
  ModelTrace trace = forward_from_h1(params, std::move(h1));
  trace.h0 = std::move(h0);
  return trace;
}

ModelTrace forward(const ModelParams& params, const ToyExample& example) {
  return forward_from_h0(params, build_h0(params, example));
}

// ---------------------------------------------------------------------------
// Tape forward.
// ---------------------------------------------------------------------------

ModelOnTape upload_model(Tape& tape, const ModelParams& params,
                         bool trainable) {
  auto up = [&](const Tensor& t) {
    return trainable ? tape.leaf(t) : tape.constant(t);
  };
  ModelOnTape m;
  m.embeddings = up(params.embeddings);
  m.ffnn_weight = up(params.ffnn_weight);
  m.ffnn_bias = up(params.ffnn_bias);
  m.gru_reset_w = up(params.gru_reset_w);
  m.gru_reset_u = up(params.gru_reset_u);
  m.gru_reset_b = up(params.gru_reset_b);
  m.gru_update_w = up(params.gru_update_w);
  m.gru_update_u = up(params.gru_update_u);
  m.gru_update_b = up(params.gru_update_b);
  m.gru_cand_w = up(params.gru_cand_w);
  m.gru_cand_u = up(params.gru_cand_u);
  m.gru_cand_b = up(params.gru_cand_b);
  m.cls_weight = up(params.cls_weight);
  m.cls_bias = up(params.cls_bias);
  m.hidden = params.hidden();
  return m;
}

std::vector<NodeId> build_h0_on_tape(Tape& tape, const ModelOnTape& model,
                                     const ToyExample& example) {
  validate_example(example);
  const NodeId qn =
      tape.embedding(model.embeddings, static_cast<std::size_t>(example.query_n));
  const NodeId qm =
      tape.embedding(model.embeddings, static_cast<std::size_t>(example.query_m));
  const NodeId query = tape.concat(qn, qm);
  std::vector<NodeId> h0;
  h0.reserve(example.length());
  for (int d : example.digits) {
    const NodeId emb =
        tape.embedding(model.embeddings, static_cast<std::size_t>(d));
    h0.push_back(tape.concat(emb, query));
  }
  return h0;
}

NodeId ffnn_on_tape(Tape& tape, const ModelOnTape& model, NodeId h0_i) {
  return tape.tanh(
      tape.add(tape.matmul(h0_i, model.ffnn_weight), model.ffnn_bias));
}

NodeId gru_cell_on_tape(Tape& tape, const ModelOnTape& model, NodeId input,
                        NodeId state) {
  auto gate_pre = [&](NodeId w, NodeId rec, NodeId u, NodeId b) {
    return tape.add(tape.add(tape.matmul(input, w), tape.matmul(rec, u)), b);
  };
  const NodeId r = tape.sigmoid(gate_pre(model.gru_reset_w, state,
                                         model.gru_reset_u, model.gru_reset_b));
  const NodeId u = tape.sigmoid(gate_pre(
      model.gru_update_w, state, model.gru_update_u, model.gru_update_b));
  const NodeId rh = tape.mul(r, state);
  const NodeId c = tape.tanh(
      gate_pre(model.gru_cand_w, rh, model.gru_cand_u, model.gru_cand_b));
  const NodeId ones = tape.constant(Tensor::full({model.hidden}, 1.0));
  return tape.add(tape.mul(tape.sub(ones, u), state), tape.mul(u, c));
}

NodeId logits_from_h1_on_tape(Tape& tape, const ModelOnTape& model,
                              std::span<const NodeId> h1) {
  NodeId state = tape.constant(Tensor::zeros({model.hidden}));
  for (NodeId x : h1) state = gru_cell_on_tape(tape, model, x, state);
  return tape.add(tape.matmul(state, model.cls_weight), model.cls_bias);
}

NodeId logits_from_h0_on_tape(Tape& tape, const ModelOnTape& model,
                              std::span<const NodeId> h0) {
  std::vector<NodeId> h1;
  h1.reserve(h0.size());
  for (NodeId x : h0) h1.push_back(ffnn_on_tape(tape, model, x));
  return logits_from_h1_on_tape(tape, model, h1);
}

NodeId logits_on_tape(Tape& tape, const ModelOnTape& model,
                      const ToyExample& example) {
  const std::vector<NodeId> h0 = build_h0_on_tape(tape, model, example);
  return logits_from_h0_on_tape(tape, model, h0);
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

int predicted_class(const Tensor& class_probs) {
  return class_probs.data[1] > class_probs.data[0] ? 1 : 0;
}

double validation_accuracy(const ModelParams& params,
                           std::span<const ToyExample> examples) {
  if (examples.empty()) return 0.0;
  std::size_t correct = 0;
  for (const ToyExample& ex : examples) {
    const ModelTrace trace = forward(params, ex);
    if (predicted_class(trace.class_probs) == (ex.label ? 1 : 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(examples.size());
}

TrainResult train_model(const ToyDataset& dataset, const ModelConfig& config) {
  if (dataset.train_count == 0 ||
      dataset.train_count >= dataset.examples.size()) {
    throw std::invalid_argument("train_model: dataset has no train/val split");
  }
  ModelParams params = init_params(config);
  FlatParams flat;
  for (auto& [name, t] : params.named()) flat.add(t);
  Adam adam(flat.count(), config.lr);
  Rng shuffle_rng = Rng::derive(config.seed, /*tag=*/0x73687566);  // "shuf"

  TrainResult result;
  result.params = params;
  result.val_accuracy =
      validation_accuracy(params, dataset.validation());

  std::vector<std::size_t> order(dataset.train_count);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grads;
  std::vector<double> values;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    // Fisher-Yates with the deterministic stream.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle_rng.below(i)]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += config.batch) {
      const std::size_t stop = std::min(order.size(), start + config.batch);
      Tape tape;
      const ModelOnTape model = upload_model(tape, params, /*trainable=*/true);
      NodeId total = tape.constant(0.0);
      for (std::size_t i = start; i < stop; ++i) {
        const ToyExample& ex = dataset.examples[order[i]];
        const NodeId logits = logits_on_tape(tape, model, ex);
        const NodeId logp = tape.log_softmax(logits);
        Tensor onehot = Tensor::zeros({2});
        onehot.data[ex.label ? 1 : 0] = 1.0;
        const NodeId ce = tape.scale(
            tape.sum(tape.mul(logp, tape.constant(std::move(onehot)))), -1.0);
        total = tape.add(total, ce);
      }
      const NodeId loss =
          tape.scale(total, 1.0 / static_cast<double>(stop - start));
      const double loss_value = tape.value(loss).data[0];
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error(
            "train_model: non-finite loss at epoch " + std::to_string(epoch) +
            ", batch " + std::to_string(batches));
      }
      loss_sum += loss_value;
      ++batches;
      tape.backward(loss);
      grads.clear();
      const NodeId param_nodes[] = {
          model.embeddings,  model.ffnn_weight,  model.ffnn_bias,
          model.gru_reset_w, model.gru_reset_u,  model.gru_reset_b,
          model.gru_update_w, model.gru_update_u, model.gru_update_b,
          model.gru_cand_w,  model.gru_cand_u,   model.gru_cand_b,
          model.cls_weight,  model.cls_bias};
      for (NodeId id : param_nodes) {
        const Tensor& g = tape.grad(id);
        grads.insert(grads.end(), g.data.begin(), g.data.end());
      }
      flat.gather(values);
      adam.step(values.data(), grads.data());
      flat.scatter(values);
    }
    EpochStats stats;
    stats.train_loss = loss_sum / static_cast<double>(batches);
    stats.val_accuracy = validation_accuracy(params, dataset.validation());
    result.epochs.push_back(stats);
    if (stats.val_accuracy > result.val_accuracy) {
      result.val_accuracy = stats.val_accuracy;
      result.params = params;
    }
    if (result.val_accuracy >= config.target_accuracy) break;
  }
  result.reached_target = result.val_accuracy >= config.target_accuracy;
  if (result.epochs.empty()) result.params = std::move(params);
  return result;
}

}  // namespace gatelab
