// Copyright 2026 The vialscan Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>

#include <nlohmann/json.hpp>

#include "vialscan/network.hpp"

namespace vialscan {

/// Metadata stored ahead of the tensors in a checkpoint archive.
struct CheckpointManifest {
  NetworkConfig network;
  std::int64_t step = 0;
  int epoch = 0;
  /// Free-form extras (schedule state, validation metrics).
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  static CheckpointManifest from_json(const nlohmann::json& j);
};

/// Archive layout (little-endian):
///   "VSCKPT01" | u64 manifest length | manifest JSON |
///   u64 tensor count | per tensor, sorted by name:
///     u32 name length | name | u8 dtype (0 f32, 1 f64) | u32 rank |
///     i64 dims[rank] | u64 byte length | raw contiguous data
/// Tensor names are prefixed "generator." or "discriminator.".
void save_checkpoint(const std::filesystem::path& path, const CheckpointManifest& manifest,
                     ModelPair& models);

struct LoadedCheckpoint {
  CheckpointManifest manifest;
  ModelPair models;
};

/// Rebuilds both networks from the manifest's config and restores every
/// tensor. Throws kModel on a missing, extra or mis-shaped tensor and on a
/// config hash mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace vialscan
