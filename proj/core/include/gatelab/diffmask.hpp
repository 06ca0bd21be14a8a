// SPDX-License-Identifier: Apache-2.0
//
// Differentiable masking: shallow probes read the frozen model's states and
// vote, per position, on stochastic gates; a gate of 0 replaces that
// position's representation with a learned baseline vector. Probes and
// baselines are trained by stochastic descent on the expected number of open
// gates subject to an output-divergence constraint, handled as a Lagrangian
// with projected ascent on the multiplier:
//
//     min_{probe, baselines} max_{lambda >= 0}
//         sum_examples  E[L0]  +  lambda * (KL(y || y_masked) - margin)
//
// Each probe layer votes with its own Hard Concrete sample; a position's
// gate is the product of the votes of all layers up to the conditioning
// layer, so later layers can close gates but never reopen them.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gatelab/hard_concrete.hpp"
#include "gatelab/metrics.hpp"
#include "gatelab/model.hpp"
#include "gatelab/rng.hpp"
#include "gatelab/tape.hpp"
#include "gatelab/toytask.hpp"

namespace gatelab {

enum class MaskMode { input, hidden };

struct ProbeConfig {
  MaskMode mode = MaskMode::input;
  HardConcrete hc{};
  double margin = 0.05;    // tolerated divergence, nats
  double lr = 3e-4;        // Adam step size for probe weights and baselines
  double lr_lambda = 0.1;  // projected-ascent step size for the multiplier
  std::size_t epochs = 16;
  std::size_t batch = 64;
  double bias_init = 5.0;  // probe bias at start: gates begin open
  std::uint64_t seed = 1;
};

// Probe weights for both layers plus the learned replacement baselines. The
// layer-0 probe conditions on (h0, h0) and the layer-1 probe on (h0, h1):
//
//     raw location  = x^T W1 h + W2 . [x; h] + bias
//
// Only the digit-embedding block of the input baseline participates in
// masking (the query block of h0 is never masked), so the tail of
// input_baseline stays at its initialization.
struct ProbeParams {
  MaskMode mode = MaskMode::input;
  Tensor w1_0;             // (D, D), D = 3 * embed_dim
  Tensor w2_0;             // (2D)
  Tensor bias_0;           // scalar
  Tensor w1_1;             // (D, B)
  Tensor w2_1;             // (D + B)
  Tensor bias_1;           // scalar
  Tensor input_baseline;   // (D); digit block [0, E) is the learned part
  Tensor hidden_baseline;  // (B)
  HardConcrete hc{};
  double lambda = 0.0;
  double margin = 0.05;

  std::size_t input_dim() const { return w1_0.shape[0]; }
  std::size_t bottleneck() const { return w1_1.shape[1]; }
  std::size_t embed_dim() const { return input_dim() / 3; }

  // Shape consistency (against the probe's own dimensions) and finiteness.
  void validate() const;

  std::vector<std::pair<const char*, const Tensor*>> named() const;
  std::vector<std::pair<const char*, Tensor*>> named();
};

ProbeParams init_probe(const ModelParams& model, const ProbeConfig& config);

// Everything sampled for one example: per-layer raw and averaged locations,
// per-layer votes, and the combined per-position gates.
struct GateSet {
  std::array<std::vector<double>, 2> raw_locations;
  std::array<std::vector<double>, 2> locations;
  std::array<std::vector<double>, 2> votes;
  std::vector<double> gates;  // product of both layers' votes
};

// Averaged gate locations for one layer: layer 0 returns its raw locations;
// layer 1 returns the running average (raw_1 + raw_0) / 2.
std::vector<double> probe_locations(const ProbeParams& probe,
                                    const ModelTrace& trace, int layer);

// One Hard Concrete draw per position per layer.
GateSet sample_gate_set(const ProbeParams& probe, const ModelTrace& trace,
                        Rng& rng);

// Elementwise product across layers.
std::vector<double> aggregate_votes(
    const std::array<std::vector<double>, 2>& votes, int layer_limit);

// Masked per-position inputs: on the digit block, x_hat = z * x + (1-z) * b;
// the query block is copied through untouched.
std::vector<Tensor> mask_input(const ModelTrace& trace,
                               std::span<const double> gates,
                               const Tensor& input_baseline);

ModelTrace masked_forward_input(const ModelParams& model,
                                const ModelTrace& trace,
                                std::span<const double> gates,
                                const Tensor& input_baseline);

// Masked bottleneck vectors h1_hat = z * h1 + (1-z) * b_hidden, with the GRU
// and head recomputed downstream.
std::vector<Tensor> mask_hidden(const ModelTrace& trace,
                                std::span<const double> gates,
                                const Tensor& hidden_baseline);

ModelTrace masked_forward_hidden(const ModelParams& model,
                                 const ModelTrace& trace,
                                 std::span<const double> gates,
                                 const Tensor& hidden_baseline);

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

struct ProbeEpochStats {
  double mean_kl = 0.0;
  double mean_l0 = 0.0;  // expected open gates per example
  double lambda = 0.0;
};

struct ProbeTrainResult {
  ProbeParams probe;
  std::vector<ProbeEpochStats> epochs;
};

// Amortized training over the dataset's train split against the frozen
// model. Deterministic given config.seed; throws std::runtime_error with the
// step index if the loss turns non-finite.
ProbeTrainResult train_probe(const ModelParams& model,
                             const ToyDataset& dataset,
                             const ProbeConfig& config);

// Per-position mean sampled gate over `samples` fixed-seed draws, with votes
// aggregated over probe layers 0..layer.
Attribution attribute(const ModelParams& model, const ProbeParams& probe,
                      const ToyExample& example, int layer,
                      std::size_t samples = 128, std::uint64_t seed = 7);

// ---------------------------------------------------------------------------
// Non-amortized variant: per-example free gate locations, no probe network,
// same Lagrangian objective.
// ---------------------------------------------------------------------------

struct NonAmortizedConfig {
  MaskMode mode = MaskMode::input;
  HardConcrete hc{};
  double margin = 0.05;
  double lr = 1e-2;
  double lr_lambda = 0.1;
  std::size_t steps = 300;
  double location_init = 5.0;  // gates begin open
  std::uint64_t seed = 1;
};

struct NonAmortizedResult {
  std::vector<double> locations;  // final per-position gate locations
  Tensor baseline;                // learned replacement vector
  double lambda = 0.0;
  std::vector<double> kl_trace;   // sampled KL per step
};

NonAmortizedResult train_gates_nonamortized(const ModelParams& model,
                                            const ToyExample& example,
                                            const NonAmortizedConfig& config);

// Mean sampled gate per position for free (non-probe) locations.
Attribution attribute_locations(std::span<const double> locations,
                                const HardConcrete& hc,
                                std::size_t samples = 128,
                                std::uint64_t seed = 7);

// ---------------------------------------------------------------------------
// Tape builders shared by the trainers (and reused by tests).
// ---------------------------------------------------------------------------

struct ProbeOnTape {
  NodeId w1_0, w2_0, bias_0;
  NodeId w1_1, w2_1, bias_1;
  NodeId input_baseline;   // digit block only, (E)
  NodeId hidden_baseline;  // (B)
};

ProbeOnTape upload_probe(Tape& tape, const ProbeParams& probe, bool trainable);

// Raw location for one position given conditioning nodes x and h.
NodeId probe_location_on_tape(Tape& tape, NodeId w1, NodeId w2, NodeId bias,
                              NodeId x, NodeId h);

// KL(y_ref || softmax(logits)) as a scalar node; y_ref is a constant
// reference distribution.
NodeId kl_to_reference_on_tape(Tape& tape, const Tensor& y_ref,
                               NodeId logits);

// z * vec + (1 - z) * baseline for a scalar gate node broadcast over size-n
// vectors.
NodeId blend_on_tape(Tape& tape, NodeId gate_scalar, NodeId vec,
                     NodeId baseline, std::size_t n);

// Masked logits for one example from per-position gate scalar nodes. Input
// mode blends each digit-embedding node with the baseline before the
// bottleneck (the query node passes through unmasked); hidden mode blends
// the per-position h1 nodes and ignores digit/query nodes. block_size is the
// baseline's length (embed dim or bottleneck width).
NodeId masked_logits_on_tape(Tape& tape, const ModelOnTape& model,
                             MaskMode mode, std::span<const NodeId> digit_nodes,
                             NodeId query_node,
                             std::span<const NodeId> h1_nodes,
                             std::span<const NodeId> gates, NodeId baseline,
                             std::size_t block_size);

// Checkpointing: tensor manifest plus scalars lambda, margin, temperature,
// stretch_l, stretch_r, mode.
void save_probe(const ProbeParams& probe, const std::filesystem::path& path);
ProbeParams load_probe(const std::filesystem::path& path);

}  // namespace gatelab
