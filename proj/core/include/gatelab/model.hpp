// SPDX-License-Identifier: Apache-2.0
//
// The analyzed sequence classifier: digit embeddings, a per-position
// feed-forward encoder (one hidden tanh layer) squeezed to a narrow tanh
// bottleneck, a unidirectional GRU, and a linear head over the final state.
// Every operation exists in two forms that share the kernels in tensor.hpp:
// a plain form for inference-time use, and a tape form for training and
// gradient-based attribution. The two produce bit-identical values, which
// downstream masking tests rely on.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gatelab/tape.hpp"
#include "gatelab/toytask.hpp"

namespace gatelab {

struct ModelConfig {
  std::size_t embed_dim = 64;
  std::size_t bottleneck = 2;    // per-position encoder output width
  std::size_t ffnn_hidden = 64;  // encoder hidden layer width
  std::size_t hidden = 64;       // GRU state width
  double lr = 1e-3;
  std::size_t batch = 32;
  std::size_t max_epochs = 50;
  double target_accuracy = 0.99;  // early-stop threshold on validation
  std::uint64_t seed = 1;
  // Encoder warm-up (see pretrain_bottleneck): number of optimizer steps,
  // step size, and the corner magnitude of the three target clusters.
  // pretrain_steps = 0 disables the warm-up.
  std::size_t pretrain_steps = 1500;
  double pretrain_lr = 1e-2;
  double pretrain_amplitude = 0.75;
};

struct ModelParams {
  Tensor embeddings;                 // (10, E)
  Tensor ffnn_w1, ffnn_b1;           // (3E, K), (K)  encoder hidden layer
  Tensor ffnn_w2, ffnn_b2;           // (K, B), (B)   encoder output layer
  Tensor gru_reset_w, gru_reset_u, gru_reset_b;     // (B, H), (H, H), (H)
  Tensor gru_update_w, gru_update_u, gru_update_b;  // same shapes
  Tensor gru_cand_w, gru_cand_u, gru_cand_b;        // same shapes
  Tensor cls_weight, cls_bias;       // (H, 2), (2)

  std::size_t embed_dim() const { return embeddings.shape[1]; }
  std::size_t ffnn_hidden() const { return ffnn_b1.size(); }
  std::size_t bottleneck() const { return ffnn_b2.size(); }
  std::size_t hidden() const { return gru_reset_b.size(); }
  std::size_t input_dim() const { return 3 * embed_dim(); }

  // Shape consistency and finiteness; throws std::invalid_argument naming
  // the offending tensor.
  void validate() const;

  // Fixed iteration order over (name, tensor) pairs, shared by training,
  // checkpointing and tape upload.
  std::vector<std::pair<const char*, const Tensor*>> named() const;
  std::vector<std::pair<const char*, Tensor*>> named();
};

struct ModelTrace {
  std::vector<Tensor> h0;          // per position: [emb(digit); emb(n); emb(m)]
  std::vector<Tensor> h1;          // per position: tanh(ffnn(h0))
  std::vector<Tensor> gru_states;  // per position
  Tensor logits;                   // (2)
  Tensor class_probs;              // (2), sums to 1
};

ModelParams init_params(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Plain forward paths.
// ---------------------------------------------------------------------------

// One GRU step (reset gate r, update gate u, candidate c, convex mix).
Tensor gru_cell(const ModelParams& params, const Tensor& input,
                const Tensor& state);

std::vector<Tensor> build_h0(const ModelParams& params,
                             const ToyExample& example);
Tensor ffnn_apply(const ModelParams& params, const Tensor& h0_i);

ModelTrace forward(const ModelParams& params, const ToyExample& example);

// Recomputes everything downstream of the given per-position inputs; h0 of
// the returned trace holds the inputs that were passed in.
ModelTrace forward_from_h0(const ModelParams& params, std::vector<Tensor> h0);

// Recomputes the GRU and head from given bottleneck vectors; the returned
// trace has an empty h0.
ModelTrace forward_from_h1(const ModelParams& params, std::vector<Tensor> h1);

// ---------------------------------------------------------------------------
// Tape forward paths (same arithmetic, recorded for differentiation).
// ---------------------------------------------------------------------------

struct ModelOnTape {
  NodeId embeddings, ffnn_w1, ffnn_b1, ffnn_w2, ffnn_b2;
  NodeId gru_reset_w, gru_reset_u, gru_reset_b;
  NodeId gru_update_w, gru_update_u, gru_update_b;
  NodeId gru_cand_w, gru_cand_u, gru_cand_b;
  NodeId cls_weight, cls_bias;
  std::size_t hidden = 0;
};

// trainable=true uploads parameters as differentiable leaves (training the
// model); trainable=false as constants (training probes against a frozen
// model, or gradient-based attribution).
ModelOnTape upload_model(Tape& tape, const ModelParams& params,
                         bool trainable);

std::vector<NodeId> build_h0_on_tape(Tape& tape, const ModelOnTape& model,
                                     const ToyExample& example);
NodeId ffnn_on_tape(Tape& tape, const ModelOnTape& model, NodeId h0_i);
NodeId gru_cell_on_tape(Tape& tape, const ModelOnTape& model, NodeId input,
                        NodeId state);
NodeId logits_from_h1_on_tape(Tape& tape, const ModelOnTape& model,
                              std::span<const NodeId> h1);
NodeId logits_from_h0_on_tape(Tape& tape, const ModelOnTape& model,
                              std::span<const NodeId> h0);
NodeId logits_on_tape(Tape& tape, const ModelOnTape& model,
                      const ToyExample& example);

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct EpochStats {
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  ModelParams params;        // snapshot from the best-accuracy epoch
  double val_accuracy = 0.0; // best validation accuracy seen
  bool reached_target = false;
  std::vector<EpochStats> epochs;
};

// Encoder warm-up: fits embeddings and the per-position encoder so the
// bottleneck maps every (digit, n, m) combination onto one of three
// well-separated corner clusters — "digit equals n", "digit equals m", and
// "neither". First coordinate flags equality with n, second with m. The
// sequence task is solvable (and its per-position states are linearly
// separable by query membership) from exactly this code, so the subsequent
// cross-entropy phase converges in a handful of epochs and keeps the
// geometry. Deterministic given config.seed; no-op when pretrain_steps == 0.
void pretrain_bottleneck(ModelParams& params, const ModelConfig& config);

// Encoder warm-up followed by Adam on cross-entropy, deterministic given
// config.seed; stops early once target_accuracy is reached. Callers decide
// how to report a miss (reached_target == false carries the best accuracy
// achieved).
TrainResult train_model(const ToyDataset& dataset, const ModelConfig& config);

double validation_accuracy(const ModelParams& params,
                           std::span<const ToyExample> examples);

int predicted_class(const Tensor& class_probs);

}  // namespace gatelab
