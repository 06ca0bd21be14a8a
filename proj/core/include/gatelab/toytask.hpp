// SPDX-License-Identifier: Apache-2.0
//
// Synthetic digit-comparison task. Each example is a sequence of digits plus
// an ordered query pair (n, m) of distinct digits; the binary label says
// whether n occurs strictly more often than m (ties count as false). The
// attribution ground truth is the uniform distribution over positions that
// hold either query digit, or over all positions when no such position
// exists, so divergences stay defined.
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "gatelab/rng.hpp"

namespace gatelab {

struct ToyExample {
  std::vector<int> digits;  // each in [0, 9]
  int query_n = 0;          // distinct digits in [0, 9]
  int query_m = 1;
  bool label = false;       // count(query_n) > count(query_m), strictly

  std::size_t length() const { return digits.size(); }
};

// Recomputes the strict-majority label from the digits.
bool label_for(const std::vector<int>& digits, int query_n, int query_m);

// Throws std::invalid_argument when digits/query are out of range, the query
// digits coincide, or the stored label disagrees with the digits.
void validate_example(const ToyExample& example);

// Uniform distribution over positions holding a query digit; uniform over
// all positions when the example contains neither query digit.
std::vector<double> ground_truth(const ToyExample& example);

struct ToyDataset {
  std::vector<ToyExample> examples;
  std::size_t train_count = 0;  // examples[0..train_count) train, rest val

  std::span<const ToyExample> train() const {
    return {examples.data(), train_count};
  }
  std::span<const ToyExample> validation() const {
    return {examples.data() + train_count, examples.size() - train_count};
  }
};

// Sampling procedure, per example: query uniform over the 90 ordered pairs
// of distinct digits; length uniform in [1, max_len]; each position is with
// probability 1/2 one of the query digits (fair coin between them) and
// otherwise uniform over the remaining eight digits. The last tenth of the
// examples form the validation split.
ToyDataset generate_toy_dataset(std::uint64_t seed, std::size_t count = 10000,
                                std::size_t max_len = 10);

// JSON Lines: one {"digits": [...], "query": [n, m], "label": bool} object
// per line. Loading re-validates every example and reports the line number
// of the first offender.
void save_jsonl(const ToyDataset& dataset, const std::filesystem::path& path);
ToyDataset load_jsonl(const std::filesystem::path& path);

}  // namespace gatelab
