// SPDX-License-Identifier: Apache-2.0

#include "gatelab/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace gatelab {

namespace {

constexpr const char* kFormat = "gatelab-tensor-manifest";
constexpr int kVersion = 1;

}  // namespace

const Tensor& TensorManifest::require(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

bool TensorManifest::has(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return true;
  }
  return false;
}

double TensorManifest::require_scalar(const std::string& name) const {
  const auto it = scalars.find(name);
  if (it == scalars.end()) {
    throw std::runtime_error("checkpoint: missing scalar '" + name + "'");
  }
  return it->second;
}

void save_manifest(const TensorManifest& manifest,
                   const std::filesystem::path& path) {
  nlohmann::json j;
  j["format"] = kFormat;
  j["version"] = kVersion;
  j["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : manifest.tensors) {
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape;
    entry["data"] = t.data;
    j["tensors"].push_back(std::move(entry));
  }
  j["scalars"] = manifest.scalars;
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("save_manifest: cannot open " + path.string());
  }
  out << j.dump(1) << '\n';
  if (!out) {
    throw std::runtime_error("save_manifest: write failed for " +
                             path.string());
  }
}

TensorManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_manifest: cannot open " + path.string());
  }
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("load_manifest: " + path.string() + ": " +
                             e.what());
  }
  const std::string where = "load_manifest: " + path.string();
  if (!j.is_object() || j.value("format", "") != kFormat) {
    throw std::runtime_error(where + ": not a " + kFormat + " file");
  }
  if (j.value("version", 0) != kVersion) {
    throw std::runtime_error(where + ": unsupported version");
  }
  TensorManifest manifest;
  if (!j.contains("tensors") || !j["tensors"].is_array()) {
    throw std::runtime_error(where + ": missing 'tensors' array");
  }
  for (const auto& entry : j["tensors"]) {
    std::string name;
    try {
      name = entry.at("name").get<std::string>();
      std::vector<std::size_t> shape =
          entry.at("shape").get<std::vector<std::size_t>>();
      std::vector<double> data = entry.at("data").get<std::vector<double>>();
      if (shape_size(shape) != data.size()) {
        throw std::runtime_error("shape " + shape_str(shape) +
                                 " does not match " +
                                 std::to_string(data.size()) + " values");
      }
      manifest.tensors.emplace_back(name,
                                    Tensor(std::move(shape), std::move(data)));
    } catch (const std::exception& e) {
      const std::string label = name.empty() ? "<unnamed>" : name;
      throw std::runtime_error(where + ": tensor '" + label + "': " +
                               e.what());
    }
  }
  if (j.contains("scalars")) {
    try {
      manifest.scalars = j["scalars"].get<std::map<std::string, double>>();
    } catch (const std::exception& e) {
      throw std::runtime_error(where + ": scalars: " + e.what());
    }
  }
  return manifest;
}

void save_model(const ModelParams& params, const std::filesystem::path& path) {
  params.validate();
  TensorManifest manifest;
  for (const auto& [name, t] : params.named()) {
    manifest.tensors.emplace_back(name, *t);
  }
  save_manifest(manifest, path);
}

ModelParams load_model(const std::filesystem::path& path) {
  const TensorManifest manifest = load_manifest(path);
  ModelParams params;
  for (auto& [name, t] : params.named()) *t = manifest.require(name);
  if (manifest.tensors.size() != params.named().size()) {
    std::map<std::string, int> seen;
    for (const auto& [name, t] : manifest.tensors) {
      if (++seen[name] > 1) {
        throw std::runtime_error("load_model: " + path.string() +
                                 ": duplicate tensor '" + name + "'");
      }
      bool known = false;
      for (const auto& [want, ptr] : params.named()) {
        if (name == want) known = true;
      }
      if (!known) {
        throw std::runtime_error("load_model: " + path.string() +
                                 ": unexpected tensor '" + name + "'");
      }
    }
  }
  try {
    params.validate();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error("load_model: " + path.string() + ": " + e.what());
  }
  return params;
}

}  // namespace gatelab
