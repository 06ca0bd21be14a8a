// SPDX-License-Identifier: Apache-2.0

#include "gatelab/toytask.hpp"

#include <fstream>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace gatelab {

bool label_for(const std::vector<int>& digits, int query_n, int query_m) {
  int count_n = 0;
  int count_m = 0;
  for (int d : digits) {
    if (d == query_n) ++count_n;
    if (d == query_m) ++count_m;
  }
  return count_n > count_m;
}

void validate_example(const ToyExample& example) {
  if (example.digits.empty()) {
    throw std::invalid_argument("ToyExample: empty digit sequence");
  }
  for (int d : example.digits) {
    if (d < 0 || d > 9) {
      throw std::invalid_argument("ToyExample: digit " + std::to_string(d) +
                                  " out of range [0, 9]");
    }
  }
  auto check_query = [](int q, const char* name) {
    if (q < 0 || q > 9) {
      throw std::invalid_argument(std::string("ToyExample: ") + name +
                                  " out of range [0, 9]");
    }
  };
  check_query(example.query_n, "query_n");
  check_query(example.query_m, "query_m");
  if (example.query_n == example.query_m) {
    throw std::invalid_argument("ToyExample: query digits must be distinct");
  }
  if (example.label !=
      label_for(example.digits, example.query_n, example.query_m)) {
    throw std::invalid_argument(
        "ToyExample: stored label disagrees with the digits");
  }
}

std::vector<double> ground_truth(const ToyExample& example) {
  const std::size_t len = example.length();
  std::vector<double> mass(len, 0.0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < len; ++i) {
    if (example.digits[i] == example.query_n ||
        example.digits[i] == example.query_m) {
      mass[i] = 1.0;
      ++hits;
    }
  }
  if (hits == 0) {
    const double u = 1.0 / static_cast<double>(len);
    for (double& v : mass) v = u;
    return mass;
  }
  const double share = 1.0 / static_cast<double>(hits);
  for (double& v : mass) v *= share;
  return mass;
}

ToyDataset generate_toy_dataset(std::uint64_t seed, std::size_t count,
                                std::size_t max_len) {
  if (count < 10) {
    throw std::invalid_argument(
        "generate_toy_dataset: need at least 10 examples for a split");
  }
  if (max_len == 0) {
    throw std::invalid_argument("generate_toy_dataset: max_len must be >= 1");
  }
  Rng rng = Rng::derive(seed, /*tag=*/0x64617461);  // "data"
  ToyDataset out;
  out.examples.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    ToyExample ex;
    // Ordered distinct query pair, uniform over all 90.
    const std::size_t pair = rng.below(90);
    ex.query_n = static_cast<int>(pair / 9);
    int m = static_cast<int>(pair % 9);
    if (m >= ex.query_n) ++m;
    ex.query_m = m;
    const std::size_t len = 1 + rng.below(max_len);
    ex.digits.reserve(len);
    for (std::size_t i = 0; i < len; ++i) {
      if (rng.uniform() < 0.5) {
        ex.digits.push_back(rng.uniform() < 0.5 ? ex.query_n : ex.query_m);
      } else {
        // Uniform over the eight digits outside the query.
        int pick = static_cast<int>(rng.below(8));
        for (int q : {std::min(ex.query_n, ex.query_m),
                      std::max(ex.query_n, ex.query_m)}) {
          if (pick >= q) ++pick;
        }
        ex.digits.push_back(pick);
      }
    }
    ex.label = label_for(ex.digits, ex.query_n, ex.query_m);
    out.examples.push_back(std::move(ex));
  }
  out.train_count = count - count / 10;
  return out;
}

void save_jsonl(const ToyDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_jsonl: cannot open " + path.string());
  }
  for (const ToyExample& ex : dataset.examples) {
    nlohmann::json j;
    j["digits"] = ex.digits;
    j["query"] = {ex.query_n, ex.query_m};
    j["label"] = ex.label;
    out << j.dump() << '\n';
  }
  if (!out) {
    throw std::runtime_error("save_jsonl: write failed for " + path.string());
  }
}

ToyDataset load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_jsonl: cannot open " + path.string());
  }
  ToyDataset out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error("load_jsonl: " + where + ": " + e.what());
    }
    ToyExample ex;
    try {
      j.at("digits").get_to(ex.digits);
      const auto& q = j.at("query");
      if (!q.is_array() || q.size() != 2) {
        throw std::runtime_error("query must be a pair");
      }
      ex.query_n = q[0].get<int>();
      ex.query_m = q[1].get<int>();
      ex.label = j.at("label").get<bool>();
    } catch (const std::exception& e) {
      throw std::runtime_error("load_jsonl: " + where + ": " + e.what());
    }
    try {
      validate_example(ex);
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error("load_jsonl: " + where + ": " + e.what());
    }
    out.examples.push_back(std::move(ex));
  }
  if (out.examples.empty()) {
    throw std::runtime_error("load_jsonl: no examples in " + path.string());
  }
  out.train_count = out.examples.size() - out.examples.size() / 10;
  return out;
}

}  // namespace gatelab
