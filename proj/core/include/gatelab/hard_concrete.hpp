// SPDX-License-Identifier: Apache-2.0
//
// Stretched-and-rectified binary concrete ("hard concrete") gates. A sample
// is built from uniform noise u by
//
//     s = sigmoid((log u - log(1 - u) + location) / temperature)
//     z = min(1, max(0, s * (stretch_r - stretch_l) + stretch_l))
//
// With stretch_l < 0 and stretch_r = 1 the distribution places a point mass
// at exactly 0 and spreads the rest over (0, 1): rectification maps the
// probability mass that lands below 0 onto 0, and P(z = 1) is zero because
// that would require s = 1 exactly. In double precision the sigmoid *does*
// reach 1.0 for arguments above ~36.7, so samples clamp s to 1 - 2^-52,
// keeping z strictly below 1; this matters downstream, where a gate value of
// exactly 1 would be indistinguishable from "not masked at all".
//
// The probability that a gate is open (z != 0) has the closed form
//
//     P(z != 0) = sigmoid(location - temperature * log(-stretch_l / stretch_r))
//
// which is what the expected-L0 penalty sums over gate locations.
#pragma once

#include <span>
#include <vector>

#include "gatelab/tape.hpp"

namespace gatelab {

// Uniform noise is clamped into [kNoiseEps, 1 - kNoiseEps] before the logit
// transform so both logs stay finite.
inline constexpr double kNoiseEps = 1e-6;

// Largest double strictly below 1; cap for the pre-stretch sigmoid output.
inline constexpr double kOneMinusEps = 1.0 - 0x1.0p-52;

struct HardConcrete {
  double temperature = 0.2;
  double stretch_l = -0.2;
  double stretch_r = 1.0;

  // Throws std::invalid_argument unless temperature > 0, stretch_l < 0 and
  // stretch_r == 1 (the family this library supports; see header comment).
  void validate() const;

  // temperature * log(-stretch_l / stretch_r), the shift inside the
  // open-probability sigmoid.
  double open_shift() const;
};

struct GateSample {
  double noise;        // clamped uniform draw u
  double pre_sigmoid;  // s, after the cap below 1
  double gate;         // z in [0, 1)
};

// log u - log(1 - u) for clamped u; the only place noise enters the sample.
double noise_logit(double u);

GateSample sample_gate(const HardConcrete& hc, double location, double u);

double gate_open_prob(const HardConcrete& hc, double location);

// Sum of open probabilities over a vector of gate locations.
double expected_l0(const HardConcrete& hc, std::span<const double> locations);

// ---------------------------------------------------------------------------
// Tape versions for training. These follow the exact same arithmetic as the
// plain functions above (same kernels, same operation order), so values
// computed with and without a tape agree bit for bit.
// ---------------------------------------------------------------------------

// locations: rank-1 node; noise: one uniform draw per location.
// Returns the rank-1 node of sampled gates.
NodeId sample_gates_on_tape(Tape& tape, const HardConcrete& hc,
                            NodeId locations, std::span<const double> noise);

// Scalar node: sum_i P(z_i != 0) over the rank-1 locations node.
NodeId expected_l0_on_tape(Tape& tape, const HardConcrete& hc,
                           NodeId locations);

}  // namespace gatelab
