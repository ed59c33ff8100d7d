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

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vialscan/imagecore.hpp"
#include "vialscan/scoring.hpp"

namespace vialscan {

inline constexpr int kTestFrames = 3;
inline constexpr int kPatchesPerAcquisition = kTestFrames * kPatchesPerImage;  // 60
inline constexpr int kRunsPerProduct = 10;
inline constexpr int kAcceptanceRuns = 7;

struct PatchScore {
  PatchId id;
  double score = 0.0;
  bool defective = false;  // ground truth for this (vial, region)
};

/// The 60 scored patches of one run: 3 frames x 5 vials x 4 regions.
struct StripAcquisition {
  std::string strip;
  int run = 0;
  std::vector<PatchScore> patches;

  /// Throws kDimension unless there are exactly 60 distinct
  /// (frame, vial, region) entries.
  void validate() const;
};

struct VialScore {
  double theta = 0.0;
  PatchId argmax;
};

/// Max score over a nonempty patch set.
VialScore vial_score(std::span<const PatchScore> patches);

struct StripVerdict {
  bool reject = false;
  VialScore worst;
  std::array<double, kRegionsPerVial> region_max{};
  std::array<double, kVialsPerStrip> vial_max{};
};

/// Rejects iff some patch exceeds its region's threshold.
StripVerdict strip_decision(const StripAcquisition& acquisition, const RegionThresholds& thresholds);

enum class Prediction { kNominal, kDefective, kUndecided };

struct ProductVerdict {
  std::string strip;
  std::vector<bool> run_rejects;
  bool defective = false;   // ground truth
  int agreements = 0;       // runs whose verdict matches the truth
  Prediction predicted = Prediction::kUndecided;
  bool correct = false;
};

/// Product is correct iff at least 7 of its 10 run verdicts match the truth.
ProductVerdict run_decision(const std::string& strip, const std::vector<bool>& run_rejects,
                            bool defective);

enum class Level { kPatch, kStrip, kRun };
const char* level_name(Level level);
Level parse_level(const std::string& name);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t tn = 0;
  std::int64_t fn = 0;

  std::int64_t total() const noexcept { return tp + fp + tn + fn; }
  double accuracy() const;
  double tpr() const;
  double tnr() const;
  double balanced_accuracy() const { return 0.5 * (tpr() + tnr()); }
  /// Positive = defective.
  void add(bool defective, bool rejected);
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

struct TimingStats {
  std::size_t batches = 0;
  double mean_batch_ms = 0.0;
  double mean_frame_ms = 0.0;  // mean_batch_ms / 60
  double p95_batch_ms = 0.0;
  double p99_batch_ms = 0.0;
  double max_batch_ms = 0.0;

  nlohmann::json to_json() const;
};

/// Percentiles use linear interpolation between order statistics.
TimingStats timing_stats(const std::vector<double>& batch_ms);
/// p in [0, 100].
double percentile(std::vector<double> values, double p);

/// Everything scored on a kit: one entry per (strip, run), with the strip's
/// ground truth.
struct KitResults {
  std::vector<StripAcquisition> acquisitions;
  std::map<std::string, bool> truth;
  std::vector<double> batch_ms;
};

struct MetricsReport {
  Level level = Level::kStrip;
  ConfusionCounts counts;
  RegionThresholds thresholds;
  std::optional<TimingStats> timing;

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;
};

MetricsReport evaluate(const KitResults& kit, const RegionThresholds& thresholds, Level level);

/// Flat per-patch CSV: strip,run,frame,vial,region,score,defective.
void write_patch_csv(const KitResults& kit, const std::filesystem::path& path);

/// Threshold refit at the given level. Patch level is a per-region sweep;
/// strip and run levels start from `start` and do coordinate ascent on the
/// level's balanced accuracy, one region at a time, until no move improves.
RegionThresholds recalibrate(const KitResults& calibration, Level level,
                             const std::optional<RegionThresholds>& start = std::nullopt);

}  // namespace vialscan
