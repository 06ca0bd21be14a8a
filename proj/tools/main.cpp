// SPDX-License-Identifier: Apache-2.0
// Command-line front end: dataset generation, model and probe training,
// per-example attribution, and method-comparison reports.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "gatelab/baselines.hpp"
#include "gatelab/checkpoint.hpp"
#include "gatelab/diffmask.hpp"
#include "gatelab/hard_concrete.hpp"
#include "gatelab/metrics.hpp"
#include "gatelab/model.hpp"
#include "gatelab/report.hpp"
#include "gatelab/toytask.hpp"

namespace fs = std::filesystem;

namespace {

// Mistakes the caller can fix (bad flags, malformed config, absent artifacts)
// exit with status 1; anything else escapes to main and exits with status 2.
struct UserError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "out";
  // dataset
  std::size_t dataset_size = 10000;
  std::size_t max_len = 10;
  // classifier under study
  std::size_t hidden = gatelab::ModelConfig{}.hidden;
  double model_lr = gatelab::ModelConfig{}.lr;
  std::size_t model_batch = gatelab::ModelConfig{}.batch;
  std::size_t model_epochs = gatelab::ModelConfig{}.max_epochs;
  // gate probe
  std::string mode = "input";
  double margin = gatelab::ProbeConfig{}.margin;
  double temperature = gatelab::HardConcrete{}.temperature;
  double stretch_lower = gatelab::HardConcrete{}.stretch_l;
  double stretch_upper = gatelab::HardConcrete{}.stretch_r;
  double probe_lr = gatelab::ProbeConfig{}.lr;
  double lambda_lr = gatelab::ProbeConfig{}.lr_lambda;
  std::size_t probe_epochs = gatelab::ProbeConfig{}.epochs;
  std::size_t probe_batch = gatelab::ProbeConfig{}.batch;
  // attribution and comparison
  std::size_t samples = 128;
  std::size_t ig_steps = 256;
  std::size_t opt_steps = gatelab::NonAmortizedConfig{}.steps;
  std::size_t table1_examples = 200;  // 0 means the whole validation split
  std::size_t table2_examples = 20;
  std::string methods =
      "gates,erasure,leave_one_out,integrated_gradients,reinforce,"
      "gates_nonamortized";
  std::string digits;  // e.g. "7,3,7,1"; empty selects example_index instead
  std::string query;   // e.g. "7,1"
  std::size_t example_index = 0;
};

// --- small parsing helpers -------------------------------------------------

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::uint64_t to_u64(const std::string& value) {
  std::size_t pos = 0;
  const auto parsed = std::stoull(value, &pos);
  if (pos != value.size()) throw std::invalid_argument("trailing characters");
  return parsed;
}

std::size_t to_size(const std::string& value) {
  return static_cast<std::size_t>(to_u64(value));
}

double to_double(const std::string& value) {
  std::size_t pos = 0;
  const double parsed = std::stod(value, &pos);
  if (pos != value.size()) throw std::invalid_argument("trailing characters");
  return parsed;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream stream(s);
  while (std::getline(stream, item, sep)) parts.push_back(trim(item));
  return parts;
}

std::vector<int> parse_int_list(const std::string& text,
                                const std::string& what) {
  std::vector<int> values;
  for (const auto& part : split(text, ',')) {
    if (part.empty()) throw UserError(what + ": empty entry in '" + text + "'");
    try {
      values.push_back(static_cast<int>(to_u64(part)));
    } catch (const std::exception&) {
      throw UserError(what + ": '" + part + "' is not a small integer");
    }
  }
  if (values.empty()) throw UserError(what + ": no values given");
  return values;
}

// --- config file -----------------------------------------------------------

bool apply_key(RunConfig& cfg, const std::string& key,
               const std::string& value) {
  if (key == "seed") cfg.seed = to_u64(value);
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "dataset_size") cfg.dataset_size = to_size(value);
  else if (key == "max_len") cfg.max_len = to_size(value);
  else if (key == "hidden") cfg.hidden = to_size(value);
  else if (key == "model_lr") cfg.model_lr = to_double(value);
  else if (key == "model_batch") cfg.model_batch = to_size(value);
  else if (key == "model_epochs") cfg.model_epochs = to_size(value);
  else if (key == "mode") cfg.mode = value;
  else if (key == "margin") cfg.margin = to_double(value);
  else if (key == "temperature") cfg.temperature = to_double(value);
  else if (key == "stretch_lower") cfg.stretch_lower = to_double(value);
  else if (key == "stretch_upper") cfg.stretch_upper = to_double(value);
  else if (key == "probe_lr") cfg.probe_lr = to_double(value);
  else if (key == "lambda_lr") cfg.lambda_lr = to_double(value);
  else if (key == "probe_epochs") cfg.probe_epochs = to_size(value);
  else if (key == "probe_batch") cfg.probe_batch = to_size(value);
  else if (key == "samples") cfg.samples = to_size(value);
  else if (key == "ig_steps") cfg.ig_steps = to_size(value);
  else if (key == "opt_steps") cfg.opt_steps = to_size(value);
  else if (key == "table1_examples") cfg.table1_examples = to_size(value);
  else if (key == "table2_examples") cfg.table2_examples = to_size(value);
  else if (key == "methods") cfg.methods = value;
  else if (key == "digits") cfg.digits = value;
  else if (key == "query") cfg.query = value;
  else if (key == "example_index") cfg.example_index = to_size(value);
  else return false;
  return true;
}

void load_config_file(RunConfig& cfg, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open config file: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto prefix = path.string() + ":" + std::to_string(lineno) + ": ";
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string text = trim(line);
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw UserError(prefix + "expected 'key = value'");
    }
    const std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    if (key.empty()) throw UserError(prefix + "empty key");
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    try {
      if (!apply_key(cfg, key, value)) {
        throw UserError(prefix + "unknown key '" + key + "'");
      }
    } catch (const UserError&) {
      throw;
    } catch (const std::exception&) {
      throw UserError(prefix + "bad value '" + value + "' for key '" + key +
                      "'");
    }
  }
}

// --- artifact plumbing -----------------------------------------------------

fs::path artifact(const RunConfig& cfg, const std::string& name) {
  return fs::path(cfg.out_dir) / name;
}

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

std::string probe_file(const RunConfig& cfg) {
  return "probe_" + cfg.mode + ".json";
}

void require_artifact(const fs::path& path) {
  if (!fs::exists(path)) {
    throw UserError("missing artifact: " + path.string());
  }
}

gatelab::ToyDataset load_dataset_or_fail(const RunConfig& cfg) {
  const auto path = artifact(cfg, "dataset.jsonl");
  require_artifact(path);
  try {
    return gatelab::load_jsonl(path);
  } catch (const std::exception& e) {
    throw UserError(e.what());
  }
}

gatelab::ModelParams load_model_or_fail(const RunConfig& cfg) {
  const auto path = artifact(cfg, "model.json");
  require_artifact(path);
  try {
    return gatelab::load_model(path);
  } catch (const std::exception& e) {
    throw UserError(e.what());
  }
}

gatelab::ProbeParams load_probe_or_fail(const RunConfig& cfg) {
  const auto path = artifact(cfg, probe_file(cfg));
  require_artifact(path);
  try {
    return gatelab::load_probe(path);
  } catch (const std::exception& e) {
    throw UserError(e.what());
  }
}

gatelab::MaskMode mode_or_fail(const RunConfig& cfg) {
  if (cfg.mode == "input") return gatelab::MaskMode::input;
  if (cfg.mode == "hidden") return gatelab::MaskMode::hidden;
  throw UserError("mode must be 'input' or 'hidden', got '" + cfg.mode + "'");
}

gatelab::HardConcrete hc_from(const RunConfig& cfg) {
  gatelab::HardConcrete hc;
  hc.temperature = cfg.temperature;
  hc.stretch_l = cfg.stretch_lower;
  hc.stretch_r = cfg.stretch_upper;
  return hc;
}

// --- commands --------------------------------------------------------------

int cmd_generate_data(const RunConfig& cfg) {
  const auto dataset =
      gatelab::generate_toy_dataset(cfg.seed, cfg.dataset_size, cfg.max_len);
  const auto path = artifact(cfg, "dataset.jsonl");
  fs::create_directories(cfg.out_dir);
  gatelab::save_jsonl(dataset, path);
  std::cout << "wrote " << dataset.examples.size() << " examples ("
            << dataset.train_count << " train, "
            << dataset.examples.size() - dataset.train_count
            << " validation) to " << path.string() << "\n";
  return 0;
}

int cmd_train_model(const RunConfig& cfg) {
  const auto dataset = load_dataset_or_fail(cfg);
  gatelab::ModelConfig mc;
  mc.hidden = cfg.hidden;
  mc.lr = cfg.model_lr;
  mc.batch = cfg.model_batch;
  mc.max_epochs = cfg.model_epochs;
  mc.seed = cfg.seed;
  const auto result = gatelab::train_model(dataset, mc);

  const auto ckpt = artifact(cfg, "model.json");
  gatelab::save_model(result.params, ckpt);
  std::string log = "epoch,train_loss,val_accuracy\n";
  for (std::size_t i = 0; i < result.epochs.size(); ++i) {
    log += std::to_string(i + 1) + "," +
           gatelab::format_double(result.epochs[i].train_loss) + "," +
           gatelab::format_double(result.epochs[i].val_accuracy) + "\n";
  }
  write_text(artifact(cfg, "model_train.csv"), log);
  std::cout << "validation accuracy "
            << gatelab::format_double(result.val_accuracy) << " after "
            << result.epochs.size() << " epochs (target "
            << (result.reached_target ? "reached" : "missed") << "); wrote "
            << ckpt.string() << "\n";
  return 0;
}

int cmd_train_probe(const RunConfig& cfg) {
  const auto dataset = load_dataset_or_fail(cfg);
  const auto model = load_model_or_fail(cfg);
  gatelab::ProbeConfig pc;
  pc.mode = mode_or_fail(cfg);
  pc.hc = hc_from(cfg);
  pc.margin = cfg.margin;
  pc.lr = cfg.probe_lr;
  pc.lr_lambda = cfg.lambda_lr;
  pc.epochs = cfg.probe_epochs;
  pc.batch = cfg.probe_batch;
  pc.seed = cfg.seed;
  const auto result = gatelab::train_probe(model, dataset, pc);

  const auto ckpt = artifact(cfg, probe_file(cfg));
  gatelab::save_probe(result.probe, ckpt);
  std::string log = "epoch,mean_kl,mean_l0,lambda\n";
  for (std::size_t i = 0; i < result.epochs.size(); ++i) {
    log += std::to_string(i + 1) + "," +
           gatelab::format_double(result.epochs[i].mean_kl) + "," +
           gatelab::format_double(result.epochs[i].mean_l0) + "," +
           gatelab::format_double(result.epochs[i].lambda) + "\n";
  }
  write_text(artifact(cfg, "probe_trace_" + cfg.mode + ".csv"), log);
  const auto& last = result.epochs.back();
  std::cout << "probe trained (" << cfg.mode << "): mean divergence "
            << gatelab::format_double(last.mean_kl) << ", mean open gates "
            << gatelab::format_double(last.mean_l0) << ", multiplier "
            << gatelab::format_double(last.lambda) << "; wrote "
            << ckpt.string() << "\n";
  return 0;
}

gatelab::ToyExample example_from(const RunConfig& cfg) {
  if (!cfg.digits.empty()) {
    const auto digits = parse_int_list(cfg.digits, "digits");
    const auto query = parse_int_list(cfg.query, "query");
    if (query.size() != 2) {
      throw UserError("query must list exactly two digits, e.g. 7,1");
    }
    gatelab::ToyExample example;
    example.digits = digits;
    example.query_n = query[0];
    example.query_m = query[1];
    example.label =
        gatelab::label_for(example.digits, example.query_n, example.query_m);
    try {
      gatelab::validate_example(example);
    } catch (const std::exception& e) {
      throw UserError(e.what());
    }
    return example;
  }
  const auto dataset = load_dataset_or_fail(cfg);
  const auto val = dataset.validation();
  if (cfg.example_index >= val.size()) {
    throw UserError("example_index " + std::to_string(cfg.example_index) +
                    " out of range: validation split has " +
                    std::to_string(val.size()) + " examples");
  }
  return val[cfg.example_index];
}

int cmd_attribute(const RunConfig& cfg) {
  const auto model = load_model_or_fail(cfg);
  const auto probe = load_probe_or_fail(cfg);
  const auto example = example_from(cfg);

  const auto layer0 =
      gatelab::attribute(model, probe, example, 0, cfg.samples, cfg.seed);
  const auto layer1 =
      gatelab::attribute(model, probe, example, 1, cfg.samples, cfg.seed);

  std::string csv = "layer,position,digit,expected_gate,normalized\n";
  const std::array<const gatelab::Attribution*, 2> layers = {&layer0, &layer1};
  for (std::size_t layer = 0; layer < layers.size(); ++layer) {
    for (std::size_t i = 0; i < example.length(); ++i) {
      csv += std::to_string(layer) + "," + std::to_string(i) + "," +
             std::to_string(example.digits[i]) + "," +
             gatelab::format_double(layers[layer]->raw[i]) + "," +
             gatelab::format_double(layers[layer]->normalized[i]) + "\n";
    }
  }
  fs::create_directories(cfg.out_dir);
  write_text(artifact(cfg, "attribution.csv"), csv);

  const std::vector<std::vector<double>> grid = {layer0.raw, layer1.raw};
  const std::vector<std::string> row_labels = {"embeddings", "hidden"};
  std::vector<std::string> column_labels;
  for (const int digit : example.digits) {
    column_labels.push_back(std::to_string(digit));
  }
  write_text(artifact(cfg, "attribution.svg"),
             gatelab::heatmap_svg(grid, row_labels, column_labels));

  std::cout << "attribution for query <" << example.query_n << ","
            << example.query_m << "> over " << example.length()
            << " positions; wrote " << artifact(cfg, "attribution.csv").string()
            << " and " << artifact(cfg, "attribution.svg").string() << "\n";
  return 0;
}

std::set<std::string> parse_methods(const std::string& text) {
  const std::set<std::string> known = {
      "gates",     "erasure",   "leave_one_out",
      "integrated_gradients", "reinforce", "gates_nonamortized"};
  std::set<std::string> selected;
  for (const auto& name : split(text, ',')) {
    if (name.empty()) continue;
    if (!known.count(name)) {
      std::string valid;
      for (const auto& k : known) valid += (valid.empty() ? "" : ", ") + k;
      throw UserError("unknown method '" + name + "' (valid: " + valid + ")");
    }
    selected.insert(name);
  }
  if (selected.empty()) throw UserError("methods: nothing selected");
  return selected;
}

gatelab::Tensor expand_baseline(const gatelab::Tensor& block, std::size_t d) {
  gatelab::Tensor full = gatelab::Tensor::zeros({d});
  for (std::size_t j = 0; j < block.size(); ++j) full.data[j] = block.data[j];
  return full;
}

void append_divergences(std::vector<gatelab::ReportRow>& rows,
                        const std::string& method,
                        const gatelab::DivergenceSummary& summary) {
  rows.push_back({method, "mean_kl", summary.mean_kl});
  rows.push_back({method, "mean_kl_unsmoothed", summary.mean_kl_unsmoothed});
  rows.push_back({method, "mean_js", summary.mean_js});
}

void append_agreement(std::vector<gatelab::ReportRow>& rows,
                      const std::string& method,
                      const gatelab::AgreementReport& report) {
  rows.push_back({method, "precision", report.precision});
  rows.push_back({method, "recall", report.recall});
  rows.push_back({method, "f1", report.f1});
  rows.push_back({method, "sparsity", report.sparsity});
  rows.push_back({method, "optimality", report.optimality});
}

int cmd_compare(const RunConfig& cfg) {
  const auto selected = parse_methods(cfg.methods);
  const auto dataset = load_dataset_or_fail(cfg);
  const auto model = load_model_or_fail(cfg);
  const auto val = dataset.validation();
  if (val.empty()) throw UserError("dataset has an empty validation split");

  gatelab::ProbeParams probe;
  if (selected.count("gates")) {
    RunConfig probe_cfg = cfg;
    probe_cfg.mode = "input";  // the comparison table masks input embeddings
    probe = load_probe_or_fail(probe_cfg);
  }

  const std::size_t t1 =
      cfg.table1_examples == 0
          ? val.size()
          : std::min<std::size_t>(cfg.table1_examples, val.size());
  const std::size_t t2 = std::min<std::size_t>(cfg.table2_examples, val.size());

  std::map<std::size_t, gatelab::ErasureResult> erasure_cache;
  const auto erasure_for =
      [&](std::size_t index) -> const gatelab::ErasureResult& {
    auto it = erasure_cache.find(index);
    if (it == erasure_cache.end()) {
      it = erasure_cache
               .emplace(index, gatelab::erasure_exact(model, val[index]))
               .first;
    }
    return it->second;
  };

  // Divergence-from-ground-truth table.
  std::vector<gatelab::Attribution> att_gates, att_erasure, att_loo, att_ig;
  std::vector<std::vector<double>> truths;
  for (std::size_t i = 0; i < t1; ++i) {
    const auto& example = val[i];
    truths.push_back(gatelab::ground_truth(example));
    if (selected.count("gates")) {
      att_gates.push_back(
          gatelab::attribute(model, probe, example, 1, cfg.samples, cfg.seed));
    }
    if (selected.count("erasure")) {
      att_erasure.push_back(erasure_for(i).attribution);
    }
    if (selected.count("leave_one_out")) {
      att_loo.push_back(gatelab::leave_one_out(model, example));
    }
    if (selected.count("integrated_gradients")) {
      att_ig.push_back(
          gatelab::integrated_gradients(model, example, cfg.ig_steps)
              .attribution);
    }
    if ((i + 1) % 50 == 0) {
      std::cerr << "compare: " << (i + 1) << "/" << t1 << " examples\n";
    }
  }

  // Per-example discrete-search protocol (and REINFORCE divergence rows).
  const bool want_rf = selected.count("reinforce") > 0;
  const bool want_na = selected.count("gates_nonamortized") > 0;
  std::vector<gatelab::Attribution> att_rf;
  std::vector<std::vector<double>> truths_rf;
  std::vector<gatelab::AgreementReport> agree_rf, agree_na;
  const std::size_t protocol_count = (want_rf || want_na) ? t2 : 0;
  for (std::size_t i = 0; i < protocol_count; ++i) {
    const auto& example = val[i];
    const auto trace = gatelab::forward(model, example);
    const int original = gatelab::predicted_class(trace.class_probs);
    const std::size_t d = trace.h0.front().size();
    const auto& optima = erasure_for(i).optimal_subsets;

    if (want_rf) {
      gatelab::ReinforceConfig rc;
      rc.mode = gatelab::MaskMode::input;
      rc.margin = cfg.margin;
      rc.steps = cfg.opt_steps;
      rc.seed = cfg.seed + i;
      const auto rf = gatelab::reinforce_gates(model, example, rc);
      truths_rf.push_back(gatelab::ground_truth(example));
      att_rf.push_back(gatelab::Attribution::from_raw(rf.keep_probs));
      const auto kept = gatelab::binarize_gates(rf.keep_probs);
      std::vector<double> hard(example.length(), 0.0);
      for (const auto k : kept) hard[k] = 1.0;
      const auto masked = gatelab::masked_forward_input(
          model, trace, hard, expand_baseline(rf.baseline, d));
      const bool preserved =
          gatelab::predicted_class(masked.class_probs) == original;
      agree_rf.push_back(gatelab::mask_agreement(kept, optima,
                                                 example.length(), preserved));
    }
    if (want_na) {
      gatelab::NonAmortizedConfig nc;
      nc.mode = gatelab::MaskMode::input;
      nc.hc = hc_from(cfg);
      nc.margin = cfg.margin;
      nc.steps = cfg.opt_steps;
      nc.seed = cfg.seed + i;
      const auto na = gatelab::train_gates_nonamortized(model, example, nc);
      std::vector<double> keep_probs(na.locations.size());
      for (std::size_t k = 0; k < na.locations.size(); ++k) {
        keep_probs[k] = gatelab::gate_open_prob(nc.hc, na.locations[k]);
      }
      const auto kept = gatelab::binarize_gates(keep_probs);
      std::vector<double> hard(example.length(), 0.0);
      for (const auto k : kept) hard[k] = 1.0;
      const auto masked = gatelab::masked_forward_input(
          model, trace, hard, expand_baseline(na.baseline, d));
      const bool preserved =
          gatelab::predicted_class(masked.class_probs) == original;
      agree_na.push_back(gatelab::mask_agreement(kept, optima,
                                                 example.length(), preserved));
    }
    std::cerr << "protocol: " << (i + 1) << "/" << protocol_count
              << " examples\n";
  }

  std::vector<gatelab::ReportRow> divergence_rows;
  if (selected.count("gates")) {
    append_divergences(divergence_rows, "gates",
                       gatelab::evaluate_against_ground_truth(att_gates,
                                                              truths));
  }
  if (selected.count("erasure")) {
    append_divergences(divergence_rows, "erasure",
                       gatelab::evaluate_against_ground_truth(att_erasure,
                                                              truths));
  }
  if (selected.count("leave_one_out")) {
    append_divergences(divergence_rows, "leave_one_out",
                       gatelab::evaluate_against_ground_truth(att_loo, truths));
  }
  if (selected.count("integrated_gradients")) {
    append_divergences(divergence_rows, "integrated_gradients",
                       gatelab::evaluate_against_ground_truth(att_ig, truths));
  }
  if (want_rf && !att_rf.empty()) {
    append_divergences(divergence_rows, "reinforce",
                       gatelab::evaluate_against_ground_truth(att_rf,
                                                              truths_rf));
  }

  fs::create_directories(cfg.out_dir);
  write_text(artifact(cfg, "table_divergence.csv"),
             gatelab::to_csv(divergence_rows));
  write_text(artifact(cfg, "table_divergence.json"),
             gatelab::to_json(divergence_rows));

  if (want_rf && want_na) {
    std::vector<gatelab::ReportRow> protocol_rows;
    append_agreement(protocol_rows, "gates_nonamortized",
                     gatelab::average_agreement(agree_na));
    append_agreement(protocol_rows, "reinforce",
                     gatelab::average_agreement(agree_rf));
    write_text(artifact(cfg, "table_protocol.csv"),
               gatelab::to_csv(protocol_rows));
    write_text(artifact(cfg, "table_protocol.json"),
               gatelab::to_json(protocol_rows));
  }

  std::cout << "compared " << t1 << " examples (protocol: " << t2
            << "); wrote " << artifact(cfg, "table_divergence.csv").string()
            << "\n";
  return 0;
}

std::vector<gatelab::ReportRow> read_report_csv(const fs::path& path) {
  require_artifact(path);
  std::ifstream in(path);
  if (!in) throw UserError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "method,metric,value") {
    throw UserError(path.string() + ": expected header 'method,metric,value'");
  }
  std::vector<gatelab::ReportRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto parts = split(line, ',');
    if (parts.size() != 3) {
      throw UserError(path.string() + ":" + std::to_string(lineno) +
                      ": expected three comma-separated fields");
    }
    gatelab::ReportRow row;
    row.method = parts[0];
    row.metric = parts[1];
    try {
      row.value = std::stod(parts[2]);
    } catch (const std::exception&) {
      throw UserError(path.string() + ":" + std::to_string(lineno) +
                      ": bad numeric value '" + parts[2] + "'");
    }
    rows.push_back(row);
  }
  return rows;
}

std::string render_table(const std::vector<gatelab::ReportRow>& rows) {
  std::vector<std::string> methods, metrics;
  std::map<std::pair<std::string, std::string>, double> cells;
  for (const auto& row : rows) {
    if (std::find(methods.begin(), methods.end(), row.method) == methods.end())
      methods.push_back(row.method);
    if (std::find(metrics.begin(), metrics.end(), row.metric) == metrics.end())
      metrics.push_back(row.metric);
    cells[{row.method, row.metric}] = row.value;
  }
  std::size_t name_width = 6;
  for (const auto& m : methods) name_width = std::max(name_width, m.size());
  std::vector<std::size_t> widths;
  for (const auto& metric : metrics) {
    std::size_t w = metric.size();
    for (const auto& method : methods) {
      const auto it = cells.find({method, metric});
      if (it != cells.end()) {
        w = std::max(w, gatelab::format_double(it->second).size());
      }
    }
    widths.push_back(w);
  }
  std::string text = "  " + std::string(name_width, ' ');
  for (std::size_t j = 0; j < metrics.size(); ++j) {
    text += "  " + std::string(widths[j] - metrics[j].size(), ' ') +
            metrics[j];
  }
  text += "\n";
  for (const auto& method : methods) {
    text += "  " + method + std::string(name_width - method.size(), ' ');
    for (std::size_t j = 0; j < metrics.size(); ++j) {
      const auto it = cells.find({method, metrics[j]});
      const std::string cell =
          it == cells.end() ? "-" : gatelab::format_double(it->second);
      text += "  " + std::string(widths[j] - cell.size(), ' ') + cell;
    }
    text += "\n";
  }
  return text;
}

int cmd_report(const RunConfig& cfg) {
  const auto divergence = read_report_csv(artifact(cfg, "table_divergence.csv"));
  std::string text = "divergence from ground-truth attribution:\n";
  text += render_table(divergence);

  const auto protocol_path = artifact(cfg, "table_protocol.csv");
  if (fs::exists(protocol_path)) {
    text += "\nagreement with exact-search optima:\n";
    text += render_table(read_report_csv(protocol_path));
  }

  const auto train_log = artifact(cfg, "model_train.csv");
  if (fs::exists(train_log)) {
    std::ifstream in(train_log);
    std::string line, last;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
      if (!trim(line).empty()) last = line;
    }
    const auto parts = split(last, ',');
    if (parts.size() == 3) {
      text += "\nclassifier: validation accuracy " + parts[2] + " after " +
              parts[0] + " epochs\n";
    }
  }

  write_text(artifact(cfg, "report.txt"), text);
  std::cout << text;
  return 0;
}

int run_cli(int argc, char** argv) {
  CLI::App app{
      "gatelab: train a digit-counting toy classifier, learn stochastic "
      "gates that reveal which inputs it relies on, and compare against "
      "exact-search and gradient attribution baselines"};
  app.get_formatter()->column_width(34);

  std::string command;
  std::string config_path;
  RunConfig cfg;

  // The config file seeds every value; flags of the same name override it.
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) {
      config_path = argv[i + 1];
    } else if (arg.rfind("--config=", 0) == 0) {
      config_path = arg.substr(9);
    }
  }
  if (!config_path.empty()) load_config_file(cfg, config_path);

  app.add_option("command", command, "one of: generate-data, train-model, "
                                     "train-probe, attribute, compare, report")
      ->required()
      ->check(CLI::IsMember({"generate-data", "train-model", "train-probe",
                             "attribute", "compare", "report"}));
  app.add_option("--config", config_path,
                 "key = value config file; flags override its entries");
  app.add_option("--seed", cfg.seed, "root seed for every stochastic stage");
  app.add_option("--out_dir,--out-dir", cfg.out_dir,
                 "directory for all artifacts");
  app.add_option("--dataset_size,--dataset-size", cfg.dataset_size,
                 "number of generated examples (last tenth is validation)");
  app.add_option("--max_len,--max-len", cfg.max_len,
                 "maximum digit-sequence length");
  app.add_option("--hidden", cfg.hidden, "recurrent state width");
  app.add_option("--model_lr,--model-lr", cfg.model_lr,
                 "classifier Adam step size");
  app.add_option("--model_batch,--model-batch", cfg.model_batch,
                 "classifier minibatch size");
  app.add_option("--model_epochs,--model-epochs", cfg.model_epochs,
                 "classifier epoch budget");
  app.add_option("--mode", cfg.mode, "which states the gates mask: "
                                     "input or hidden");
  app.add_option("--margin", cfg.margin,
                 "tolerated divergence between full and masked predictions");
  app.add_option("--temperature", cfg.temperature,
                 "relaxed-gate temperature");
  app.add_option("--stretch_lower,--stretch-lower", cfg.stretch_lower,
                 "lower end of the stretched gate interval");
  app.add_option("--stretch_upper,--stretch-upper", cfg.stretch_upper,
                 "upper end of the stretched gate interval");
  app.add_option("--probe_lr,--probe-lr", cfg.probe_lr,
                 "probe Adam step size");
  app.add_option("--lambda_lr,--lambda-lr", cfg.lambda_lr,
                 "multiplier ascent step size");
  app.add_option("--probe_epochs,--probe-epochs", cfg.probe_epochs,
                 "probe epoch budget");
  app.add_option("--probe_batch,--probe-batch", cfg.probe_batch,
                 "probe minibatch size");
  app.add_option("--samples", cfg.samples,
                 "Monte Carlo samples per attribution");
  app.add_option("--ig_steps,--ig-steps", cfg.ig_steps,
                 "path-integral resolution for integrated gradients");
  app.add_option("--opt_steps,--opt-steps", cfg.opt_steps,
                 "per-example optimization steps (reinforce and "
                 "non-amortized gates)");
  app.add_option("--table1_examples,--table1-examples", cfg.table1_examples,
                 "validation examples for the divergence table (0 = all)");
  app.add_option("--table2_examples,--table2-examples", cfg.table2_examples,
                 "validation examples for the per-example protocol");
  app.add_option("--methods", cfg.methods,
                 "comma-separated method selection for compare");
  app.add_option("--digits", cfg.digits,
                 "explicit example digits, e.g. 7,3,7,1");
  app.add_option("--query", cfg.query, "explicit query pair, e.g. 7,1");
  app.add_option("--example_index,--example-index", cfg.example_index,
                 "validation example to attribute when --digits is unset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (command == "generate-data") return cmd_generate_data(cfg);
  if (command == "train-model") return cmd_train_model(cfg);
  if (command == "train-probe") return cmd_train_probe(cfg);
  if (command == "attribute") return cmd_attribute(cfg);
  if (command == "compare") return cmd_compare(cfg);
  if (command == "report") return cmd_report(cfg);
  throw UserError("unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
}
