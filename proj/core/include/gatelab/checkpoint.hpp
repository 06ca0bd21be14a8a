// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints as JSON tensor manifests: a named list of shaped tensors plus
// optional scalar fields. Doubles are serialized with shortest-round-trip
// formatting, so save followed by load reproduces every value bit for bit.
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gatelab/model.hpp"
#include "gatelab/tensor.hpp"

namespace gatelab {

struct TensorManifest {
  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, double> scalars;

  const Tensor& require(const std::string& name) const;
  bool has(const std::string& name) const;
  double require_scalar(const std::string& name) const;
};

void save_manifest(const TensorManifest& manifest,
                   const std::filesystem::path& path);

// Throws std::runtime_error with a field-level diagnostic (tensor name, line
// context, shape mismatch) on malformed input.
TensorManifest load_manifest(const std::filesystem::path& path);

void save_model(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace gatelab
