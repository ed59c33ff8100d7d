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

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vialscan/aggregation.hpp"
#include "vialscan/scoring.hpp"
#include "vialscan/synthkit.hpp"
#include "vialscan/training.hpp"

namespace vialscan {

/// One config file for the whole workflow: kit generation, training and
/// patch geometry.
struct PipelineConfig {
  int patch_size = kDefaultPatchSize;
  TrainConfig training;
  KitCounts counts;
  StripSpec spec;
  bool train_on_ranked = true;  // add rank_min/rank_max images to the frames

  void validate() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
};

/// Patches of every train-split image in a kit.
PatchSet load_training_patches(const std::filesystem::path& root, const KitManifest& manifest,
                               int patch_size, bool include_ranked = true);

/// Frames of one stored run, sorted by frame index.
std::vector<std::pair<int, Image>> load_run_frames(const std::filesystem::path& dir);

/// The 60 patches (3 frames x 20 cells) of one run plus their ids.
struct AcquisitionPatches {
  std::vector<Image> patches;
  std::vector<PatchId> ids;
};
AcquisitionPatches acquisition_patches(const std::vector<std::pair<int, Image>>& frames,
                                       const RegionLayout& layout, int patch_size,
                                       const std::string& strip, int run);

/// Scores every run of a split. Timing covers model forward and scoring of
/// each 60-patch batch only.
KitResults score_split(const Scorer& scorer, const std::filesystem::path& root,
                       const KitManifest& manifest, const std::string& split,
                       const std::function<void(std::size_t, std::size_t)>& progress = {});

/// Labels patches of defective strips by their defect cells.
bool patch_is_defective(const StripRecord& strip, int vial, int region);

}  // namespace vialscan
