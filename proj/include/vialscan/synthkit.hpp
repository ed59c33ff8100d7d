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
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vialscan/imagecore.hpp"

namespace vialscan {

/// Procedural strip renderer parameters. Geometry is a 5 x 4 grid of equal
/// cells; per-strip structure (fill level, meniscus, flag marks, gradient)
/// derives from `seed`, per-run content (bubbles, droplets, lighting) from
/// the run seed.
struct StripSpec {
  int width = 320;
  int height = 256;
  int frames = 16;
  double fill_min = 0.25;  // meniscus depth within the liquid band, fraction of band height
  double fill_max = 0.45;
  double curvature_min = 0.0;  // meniscus sag at the walls, fraction of band height
  double curvature_max = 0.08;
  int bubbles_min = 1;
  int bubbles_max = 4;
  double bubble_radius_min = 1.5;  // px
  double bubble_radius_max = 3.5;
  double bubble_speed = 1.2;  // px per frame, upward
  double sway_max = 1.5;      // meniscus tilt amplitude over a run, px at the wall
  int droplets_max = 3;
  double gradient = 0.06;  // vertical illumination falloff across the strip
  double jitter = 0.03;    // per-run gain jitter (uniform half-width)
  double frame_jitter = 0.005;
  double noise_sigma = 0.004;
  std::uint64_t seed = 0;

  void validate() const;
  RegionLayout layout() const { return RegionLayout::uniform(width, height); }
  nlohmann::json to_json() const;
  static StripSpec from_json(const nlohmann::json& j);
  friend bool operator==(const StripSpec&, const StripSpec&) = default;
};

enum class DefectKind { kStuckParticle, kBlackSpot, kDeformation, kScratch, kFoam, kBurn };
inline constexpr int kDefectKinds = 6;
const char* defect_kind_name(DefectKind kind);
/// Throws kConfig on an unknown name.
DefectKind parse_defect_kind(const std::string& name);

struct DefectSpec {
  DefectKind kind = DefectKind::kStuckParticle;
  int vial = 0;
  int region = 0;
  double magnitude = 1.0;  // [0,1]; 0 leaves the stack untouched
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static DefectSpec from_json(const nlohmann::json& j);
  friend bool operator==(const DefectSpec&, const DefectSpec&) = default;
};

/// Nominal acquisition of `spec.frames` frames.
FrameStack gen_nominal_strip(const StripSpec& spec, std::uint64_t run_seed);

/// Renders the defect identically on every frame, inside its cell only.
FrameStack inject_defect(const FrameStack& stack, const DefectSpec& defect,
                         const RegionLayout& layout);

/// Frames scored at test time: first, eighth and last.
std::vector<int> test_frame_indices(int frames);

struct KitCounts {
  int train = 50;          // nominal strips
  int train_runs = 3;
  int cal_defective = 30;
  int cal_nominal = 30;
  int test_defective = 141;
  int test_nominal = 120;
  int eval_runs = 10;      // runs per calibration/test strip
  double magnitude_min = 0.6;
  double magnitude_max = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static KitCounts from_json(const nlohmann::json& j);
};

struct StripRecord {
  std::string id;
  std::string split;  // train | calibration | test
  bool defective = false;
  std::uint64_t strip_seed = 0;
  std::vector<DefectSpec> defects;
  std::vector<std::uint64_t> run_seeds;

  nlohmann::json to_json() const;
  static StripRecord from_json(const nlohmann::json& j);
  friend bool operator==(const StripRecord&, const StripRecord&) = default;
};

struct KitManifest {
  StripSpec spec;
  KitCounts counts;
  std::uint64_t seed = 0;
  std::vector<StripRecord> strips;

  std::vector<const StripRecord*> split(const std::string& name) const;
  nlohmann::json to_json() const;
  static KitManifest from_json(const nlohmann::json& j);
  static KitManifest load(const std::filesystem::path& root);
  void save(const std::filesystem::path& root) const;
};

/// Draws every strip, defect and run seed; touches no files.
KitManifest plan_kit(const KitCounts& counts, const StripSpec& spec, std::uint64_t seed);

/// Renders one run of a manifest strip, defects included.
FrameStack render_run(const KitManifest& manifest, const StripRecord& strip, int run);

/// Directory of one run: <root>/<split>/<strip_id>/<run>.
std::filesystem::path run_dir(const std::filesystem::path& root, const StripRecord& strip, int run);
std::string frame_file(int frame);

/// Writes one strip. Train runs get all frames plus rank_min/rank_max;
/// calibration/test runs get the three test frames. Each run directory is
/// written to a temporary name and renamed.
void write_strip(const std::filesystem::path& root, const KitManifest& manifest,
                 const StripRecord& strip);

/// plan_kit + write_strip for every strip (parallel across strips) + manifest.
KitManifest build_kit(const std::filesystem::path& root, const KitCounts& counts,
                      const StripSpec& spec, std::uint64_t seed, int threads = 1);

}  // namespace vialscan
