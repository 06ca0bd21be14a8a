// SPDX-License-Identifier: Apache-2.0

#include "gatelab/hard_concrete.hpp"

#include <cmath>
#include <stdexcept>

namespace gatelab {

void HardConcrete::validate() const {
  if (!(temperature > 0.0)) {
    throw std::invalid_argument("HardConcrete: temperature must be positive");
  }
  if (!(stretch_l < 0.0)) {
    throw std::invalid_argument("HardConcrete: stretch_l must be negative");
  }
  if (stretch_r != 1.0) {
    throw std::invalid_argument(
        "HardConcrete: stretch_r must be 1 (gates live in [0, 1))");
  }
}

double HardConcrete::open_shift() const {
  return temperature * std::log(-stretch_l / stretch_r);
}

double noise_logit(double u) {
  if (u < kNoiseEps) u = kNoiseEps;
  if (u > 1.0 - kNoiseEps) u = 1.0 - kNoiseEps;
  return std::log(u) - std::log(1.0 - u);
}

GateSample sample_gate(const HardConcrete& hc, double location, double u) {
  GateSample out;
  if (u < kNoiseEps) u = kNoiseEps;
  if (u > 1.0 - kNoiseEps) u = 1.0 - kNoiseEps;
  out.noise = u;
  const double inv_tau = 1.0 / hc.temperature;
  double s = kernels::sigmoid((location + noise_logit(u)) * inv_tau);
  if (s > kOneMinusEps) s = kOneMinusEps;
  out.pre_sigmoid = s;
  double z = s * (hc.stretch_r - hc.stretch_l) + hc.stretch_l;
  z = z > 0.0 ? z : 0.0;
  z = z < 1.0 ? z : 1.0;
  out.gate = z;
  return out;
}

double gate_open_prob(const HardConcrete& hc, double location) {
  return kernels::sigmoid(location - hc.open_shift());
}

double expected_l0(const HardConcrete& hc,
                   std::span<const double> locations) {
  double acc = 0.0;
  for (double loc : locations) acc += gate_open_prob(hc, loc);
  return acc;
}

NodeId sample_gates_on_tape(Tape& tape, const HardConcrete& hc,
                            NodeId locations, std::span<const double> noise) {
  const Tensor& loc = tape.value(locations);
  if (loc.rank() != 1 || loc.size() != noise.size()) {
    throw std::invalid_argument(
        "sample_gates_on_tape: need rank-1 locations with one noise draw per "
        "gate");
  }
  std::vector<double> logits(noise.size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    logits[i] = noise_logit(noise[i]);
  }
  const double inv_tau = 1.0 / hc.temperature;
  NodeId pre = tape.scale(
      tape.add(locations, tape.constant(Tensor::from_vector(std::move(logits)))),
      inv_tau);
  NodeId s = tape.min_const(tape.sigmoid(pre), kOneMinusEps);
  NodeId stretched =
      tape.shift(tape.scale(s, hc.stretch_r - hc.stretch_l), hc.stretch_l);
  return tape.min_const(tape.max_const(stretched, 0.0), 1.0);
}

NodeId expected_l0_on_tape(Tape& tape, const HardConcrete& hc,
                           NodeId locations) {
  return tape.sum(tape.sigmoid(tape.shift(locations, -hc.open_shift())));
}

}  // namespace gatelab
