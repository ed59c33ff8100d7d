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

#include "vialscan/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>

#include "vialscan/error.hpp"

namespace vialscan {

void PipelineConfig::validate() const {
  if (patch_size < 16) raise(ErrorCode::kConfig, "patch_size must be >= 16");
  if (patch_size != training.network.image_size) {
    raise(ErrorCode::kConfig, "patch_size must equal network.image_size");
  }
  training.validate();
  counts.validate();
  spec.validate();
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"patch_size", patch_size},
          {"train_on_ranked", train_on_ranked},
          {"training", training.to_json()},
          {"kit", {{"counts", counts.to_json()}, {"spec", spec.to_json()}}}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    if (j.contains("training")) c.training = TrainConfig::from_json(j.at("training"));
    c.patch_size = j.value("patch_size", c.training.network.image_size);
    c.train_on_ranked = j.value("train_on_ranked", c.train_on_ranked);
    if (j.contains("kit")) {
      const auto& kit = j.at("kit");
      if (kit.contains("counts")) c.counts = KitCounts::from_json(kit.at("counts"));
      if (kit.contains("spec")) c.spec = StripSpec::from_json(kit.at("spec"));
    }
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::vector<std::pair<int, Image>> load_run_frames(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) raise(ErrorCode::kData, "no run directory " + dir.string());
  std::vector<std::pair<int, Image>> frames;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("frame_", 0) != 0 || entry.path().extension() != ".png") continue;
    int index = 0;
    try {
      index = std::stoi(name.substr(6));
    } catch (const std::exception&) {
      raise(ErrorCode::kData, "bad frame file name " + entry.path().string());
    }
    frames.emplace_back(index, load_png(entry.path()));
  }
  std::sort(frames.begin(), frames.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  if (frames.empty()) raise(ErrorCode::kData, "no frame_*.png in " + dir.string());
  return frames;
}

PatchSet load_training_patches(const std::filesystem::path& root, const KitManifest& manifest,
                               int patch_size, bool include_ranked) {
  PatchSet set(patch_size);
  const RegionLayout layout = manifest.spec.layout();
  auto add_image = [&](const Image& img) {
    const PatchGrid grid = extract_patches(img, layout, patch_size);
    for (const auto& p : grid.patches) set.add(p);
  };
  for (const StripRecord* strip : manifest.split("train")) {
    for (int run = 0; run < static_cast<int>(strip->run_seeds.size()); ++run) {
      const auto dir = run_dir(root, *strip, run);
      for (const auto& [index, img] : load_run_frames(dir)) add_image(img);
      if (include_ranked) {
        for (const char* name : {"rank_min.png", "rank_max.png"}) {
          if (!std::filesystem::exists(dir / name)) raise(ErrorCode::kData, "missing " + (dir / name).string());
          add_image(load_png(dir / name));
        }
      }
    }
  }
  if (set.size() == 0) raise(ErrorCode::kData, "kit at " + root.string() + " has no training images");
  return set;
}

AcquisitionPatches acquisition_patches(const std::vector<std::pair<int, Image>>& frames,
                                       const RegionLayout& layout, int patch_size,
                                       const std::string& strip, int run) {
  std::vector<int> wanted;
  if (static_cast<int>(frames.size()) == kTestFrames) {
    for (const auto& f : frames) wanted.push_back(f.first);
  } else {
    const int n = frames.back().first + 1;
    wanted = test_frame_indices(n);
  }
  AcquisitionPatches out;
  for (int index : wanted) {
    const auto it = std::find_if(frames.begin(), frames.end(), [&](const auto& f) { return f.first == index; });
    if (it == frames.end()) raise(ErrorCode::kData, "run lacks frame " + std::to_string(index));
    const PatchGrid grid = extract_patches(it->second, layout, patch_size);
    for (int v = 0; v < kVialsPerStrip; ++v) {
      for (int r = 0; r < kRegionsPerVial; ++r) {
        out.patches.push_back(grid.at(v, r));
        out.ids.push_back(PatchId{strip, run, index, v, r});
      }
    }
  }
  return out;
}

bool patch_is_defective(const StripRecord& strip, int vial, int region) {
  return std::any_of(strip.defects.begin(), strip.defects.end(), [&](const DefectSpec& d) {
    return d.vial == vial && d.region == region && d.magnitude > 0.0;
  });
}

KitResults score_split(const Scorer& scorer, const std::filesystem::path& root,
                       const KitManifest& manifest, const std::string& split,
                       const std::function<void(std::size_t, std::size_t)>& progress) {
  using Clock = std::chrono::steady_clock;
  const auto strips = manifest.split(split);
  if (strips.empty()) raise(ErrorCode::kData, "kit has no '" + split + "' strips");
  const RegionLayout layout = manifest.spec.layout();
  KitResults kit;
  std::size_t done = 0;
  for (const StripRecord* strip : strips) {
    kit.truth[strip->id] = strip->defective;
    for (int run = 0; run < static_cast<int>(strip->run_seeds.size()); ++run) {
      const auto frames = load_run_frames(run_dir(root, *strip, run));
      const auto acq = acquisition_patches(frames, layout, scorer.image_size(), strip->id, run);
      const auto t0 = Clock::now();
      const auto scores = scorer.scores(acq.patches);
      const auto t1 = Clock::now();
      kit.batch_ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
      StripAcquisition a{strip->id, run, {}};
      for (std::size_t i = 0; i < scores.size(); ++i) {
        a.patches.push_back({acq.ids[i], scores[i], patch_is_defective(*strip, acq.ids[i].vial, acq.ids[i].region)});
      }
      kit.acquisitions.push_back(std::move(a));
    }
    if (progress) progress(++done, strips.size());
  }
  return kit;
}

}  // namespace vialscan
