// SPDX-License-Identifier: Apache-2.0

#include "gatelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gatelab {

Attribution Attribution::from_raw(std::vector<double> raw) {
  if (raw.empty()) {
    throw std::invalid_argument("Attribution: no positions to score");
  }
  for (double v : raw) {
    if (!(v >= 0.0)) {
      throw std::invalid_argument(
          "Attribution: raw scores must be non-negative and finite");
    }
  }
  Attribution a;
  double total = 0.0;
  for (double v : raw) total += v;
  a.normalized.resize(raw.size());
  if (total > 0.0) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      a.normalized[i] = raw[i] / total;
    }
  } else {
    // All-zero scores carry no information; fall back to uniform.
    const double u = 1.0 / static_cast<double>(raw.size());
    std::fill(a.normalized.begin(), a.normalized.end(), u);
  }
  a.raw = std::move(raw);
  return a;
}

namespace {

void require_same_length(std::span<const double> p,
                         std::span<const double> q) {
  if (p.size() != q.size()) {
    throw std::invalid_argument("divergence: length mismatch, " +
                                std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()));
  }
  if (p.empty()) {
    throw std::invalid_argument("divergence: empty distributions");
  }
}

}  // namespace

double kl_divergence(std::span<const double> p, std::span<const double> q,
                     double eps) {
  require_same_length(p, q);
  const double norm = 1.0 + eps * static_cast<double>(q.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    const double qi = (q[i] + eps) / norm;
    acc += p[i] * (std::log(p[i]) - std::log(qi));
  }
  return acc;
}

double kl_divergence_unsmoothed(std::span<const double> p,
                                std::span<const double> q) {
  require_same_length(p, q);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return std::numeric_limits<double>::infinity();
    acc += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return acc;
}

double js_divergence(std::span<const double> p, std::span<const double> q) {
  require_same_length(p, q);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    if (p[i] > 0.0) acc += 0.5 * p[i] * (std::log(p[i]) - std::log(m));
    if (q[i] > 0.0) acc += 0.5 * q[i] * (std::log(q[i]) - std::log(m));
  }
  return acc;
}

DivergenceSummary evaluate_against_ground_truth(
    std::span<const Attribution> attributions,
    std::span<const std::vector<double>> ground_truths) {
  if (attributions.size() != ground_truths.size() || attributions.empty()) {
    throw std::invalid_argument(
        "evaluate_against_ground_truth: need one attribution per example");
  }
  DivergenceSummary s;
  for (std::size_t i = 0; i < attributions.size(); ++i) {
    const auto& q = attributions[i].normalized;
    const auto& p = ground_truths[i];
    s.mean_kl += kl_divergence(p, q);
    s.mean_kl_unsmoothed += kl_divergence_unsmoothed(p, q);
    s.mean_js += js_divergence(p, q);
  }
  const double n = static_cast<double>(attributions.size());
  s.mean_kl /= n;
  s.mean_kl_unsmoothed /= n;
  s.mean_js /= n;
  return s;
}

AgreementReport mask_agreement(
    const std::vector<std::size_t>& kept,
    const std::vector<std::vector<std::size_t>>& optima,
    std::size_t sequence_length, bool argmax_preserved) {
  if (optima.empty()) {
    throw std::invalid_argument("mask_agreement: no erasure optima");
  }
  if (sequence_length == 0) {
    throw std::invalid_argument("mask_agreement: empty sequence");
  }
  AgreementReport best;
  best.f1 = -1.0;
  for (const auto& optimum : optima) {
    std::size_t hits = 0;
    for (std::size_t pos : kept) {
      if (std::find(optimum.begin(), optimum.end(), pos) != optimum.end()) {
        ++hits;
      }
    }
    AgreementReport r;
    r.precision = kept.empty()
                      ? 0.0
                      : static_cast<double>(hits) /
                            static_cast<double>(kept.size());
    r.recall = static_cast<double>(hits) / static_cast<double>(optimum.size());
    r.f1 = (r.precision + r.recall) > 0.0
               ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
               : 0.0;
    if (r.f1 > best.f1) {
      best = r;
    }
  }
  best.sparsity = 1.0 - static_cast<double>(kept.size()) /
                            static_cast<double>(sequence_length);
  best.optimality =
      (argmax_preserved && kept.size() == optima.front().size()) ? 1.0 : 0.0;
  return best;
}

AgreementReport average_agreement(std::span<const AgreementReport> reports) {
  if (reports.empty()) {
    throw std::invalid_argument("average_agreement: empty input");
  }
  AgreementReport avg;
  for (const AgreementReport& r : reports) {
    avg.precision += r.precision;
    avg.recall += r.recall;
    avg.f1 += r.f1;
    avg.sparsity += r.sparsity;
    avg.optimality += r.optimality;
  }
  const double n = static_cast<double>(reports.size());
  avg.precision /= n;
  avg.recall /= n;
  avg.f1 /= n;
  avg.sparsity /= n;
  avg.optimality /= n;
  return avg;
}

std::vector<std::size_t> binarize_gates(std::span<const double> gates,
                                        double threshold) {
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < gates.size(); ++i) {
    if (gates[i] >= threshold) kept.push_back(i);
  }
  return kept;
}

}  // namespace gatelab
