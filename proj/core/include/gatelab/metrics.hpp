// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: KL/JS divergences between attribution distributions
// and ground truth, and token-level agreement between predicted kept-sets
// and the exhaustive-erasure optima.
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gatelab {

// Per-position attribution scores. `normalized` is raw rescaled to sum to 1;
// when every raw score is zero the normalized form falls back to uniform so
// divergences stay defined.
struct Attribution {
  std::vector<double> raw;
  std::vector<double> normalized;

  static Attribution from_raw(std::vector<double> raw);
};

// KL(p || q) in nats with q smoothed: q' = (q + eps) / (1 + eps * len).
// Terms with p_i = 0 contribute zero. Throws on length mismatch.
double kl_divergence(std::span<const double> p, std::span<const double> q,
                     double eps = 1e-8);

// KL(p || q) without smoothing; +infinity when q lacks mass where p has it.
double kl_divergence_unsmoothed(std::span<const double> p,
                                std::span<const double> q);

// Jensen-Shannon divergence (nats): always finite, bounded by log 2.
double js_divergence(std::span<const double> p, std::span<const double> q);

struct DivergenceSummary {
  double mean_kl = 0.0;             // smoothed
  double mean_kl_unsmoothed = 0.0;  // may be +infinity
  double mean_js = 0.0;
};

// Means over examples with the ground truth as p and each attribution's
// normalized scores as q. Sizes must match pairwise.
DivergenceSummary evaluate_against_ground_truth(
    std::span<const Attribution> attributions,
    std::span<const std::vector<double>> ground_truths);

struct AgreementReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double sparsity = 0.0;    // fraction of positions masked out
  double optimality = 0.0;  // per example 0/1, averaged over a set
};

// Token-level agreement of one predicted kept-set against the erasure
// optima; the best-matching optimum determines precision/recall/F1.
// `argmax_preserved` reports whether feeding the kept positions back through
// the model reproduced the original prediction; optimality requires that
// plus a kept-set size equal to the optimum size.
AgreementReport mask_agreement(
    const std::vector<std::size_t>& kept,
    const std::vector<std::vector<std::size_t>>& optima,
    std::size_t sequence_length, bool argmax_preserved);

AgreementReport average_agreement(std::span<const AgreementReport> reports);

// Positions whose gate value meets the 0.5 threshold.
std::vector<std::size_t> binarize_gates(std::span<const double> gates,
                                        double threshold = 0.5);

}  // namespace gatelab
