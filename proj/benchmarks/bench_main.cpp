// SPDX-License-Identifier: Apache-2.0
// Microbenchmarks for the hot paths: classifier forward pass, gate
// sampling, per-example gate optimization, and attribution baselines.

#include <benchmark/benchmark.h>

#include "gatelab/baselines.hpp"
#include "gatelab/diffmask.hpp"
#include "gatelab/model.hpp"
#include "gatelab/rng.hpp"
#include "gatelab/toytask.hpp"

namespace {

const gatelab::ToyExample& example10() {
  static const gatelab::ToyExample example = [] {
    gatelab::ToyExample ex;
    ex.digits = {7, 3, 7, 1, 9, 2, 7, 1, 4, 5};
    ex.query_n = 7;
    ex.query_m = 1;
    ex.label = gatelab::label_for(ex.digits, ex.query_n, ex.query_m);
    return ex;
  }();
  return example;
}

const gatelab::ModelParams& model() {
  static const gatelab::ModelParams params =
      gatelab::init_params(gatelab::ModelConfig{});
  return params;
}

const gatelab::ProbeParams& probe() {
  static const gatelab::ProbeParams params =
      gatelab::init_probe(model(), gatelab::ProbeConfig{});
  return params;
}

void bm_forward(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(gatelab::forward(model(), example10()));
  }
}
BENCHMARK(bm_forward);

void bm_sample_gate_set(benchmark::State& state) {
  const auto trace = gatelab::forward(model(), example10());
  gatelab::Rng rng(99);
  for (auto _ : state) {
    benchmark::DoNotOptimize(gatelab::sample_gate_set(probe(), trace, rng));
  }
}
BENCHMARK(bm_sample_gate_set);

void bm_attribute_16_samples(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        gatelab::attribute(model(), probe(), example10(), 1, 16, 7));
  }
}
BENCHMARK(bm_attribute_16_samples);

void bm_nonamortized_step(benchmark::State& state) {
  gatelab::NonAmortizedConfig config;
  config.steps = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        gatelab::train_gates_nonamortized(model(), example10(), config));
  }
}
BENCHMARK(bm_nonamortized_step);

void bm_reinforce_step(benchmark::State& state) {
  gatelab::ReinforceConfig config;
  config.steps = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        gatelab::reinforce_gates(model(), example10(), config));
  }
}
BENCHMARK(bm_reinforce_step);

void bm_erasure_exact_len10(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(gatelab::erasure_exact(model(), example10()));
  }
}
BENCHMARK(bm_erasure_exact_len10);

void bm_integrated_gradients_64(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        gatelab::integrated_gradients(model(), example10(), 64));
  }
}
BENCHMARK(bm_integrated_gradients_64);

}  // namespace

BENCHMARK_MAIN();
