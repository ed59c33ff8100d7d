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
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "vialscan/imagecore.hpp"
#include "vialscan/metrics.hpp"
#include "vialscan/network.hpp"

namespace vialscan {

struct ScoredPatch {
  PatchId id;
  double score = 0.0;  // 1 - ssim(input, reconstruction)
  Image input;
  Image reconstruction;
  std::optional<Image> heatmap;
};

/// Scores patches against a generator held in inference mode.
class Scorer {
 public:
  Scorer(Generator generator, SsimParams params = {}, int chunk = 64);

  ScoredPatch score(const Image& x, const PatchId& id = {}) const;
  std::vector<ScoredPatch> score(const std::vector<Image>& xs,
                                 const std::vector<PatchId>& ids = {}) const;
  /// Scores only; reconstructions are dropped.
  std::vector<double> scores(const std::vector<Image>& xs) const;

  const SsimParams& ssim_params() const noexcept { return params_; }
  int image_size() const;

 private:
  std::vector<Image> reconstruct(const std::vector<Image>& xs) const;

  mutable Generator generator_;
  SsimParams params_;
  int chunk_;
};

ScoredPatch score_patch(const Generator& generator, const Image& x,
                        const SsimParams& params = {});

/// min-max normalized |x - x_hat|.
Image heatmap(const Image& x, const Image& x_hat);

/// Four panels side by side: input, reconstruction, |x - x_hat|, and the
/// heatmap blended over the input with a JET colormap. Written as RGB PNG.
void save_overlay(const Image& x, const Image& x_hat, const std::filesystem::path& path);

struct RegionThresholds {
  std::array<double, kRegionsPerVial> values{};

  void validate() const;
  double at(int region) const;
  nlohmann::json to_json() const;
  static RegionThresholds from_json(const nlohmann::json& j);
  static RegionThresholds load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path, const nlohmann::json& meta = {}) const;
  friend bool operator==(const RegionThresholds&, const RegionThresholds&) = default;
};

struct LabeledScore {
  int region = 0;
  double score = 0.0;
  bool defective = false;
};

struct SweepResult {
  double threshold = 0.0;
  double balanced_accuracy = 0.0;
};

/// Balanced accuracy of the rule "reject iff score > threshold", positive =
/// defective.
double balanced_accuracy_at(const std::vector<double>& nominal,
                            const std::vector<double>& defective, double threshold);

/// Candidate thresholds: midpoints between consecutive distinct scores, half
/// the smallest score (reject all) and the next double above the largest
/// (accept all). Non-positive candidates are dropped. Returns the candidate
/// of maximal balanced accuracy, lowest on ties.
SweepResult sweep_threshold(const std::vector<double>& nominal,
                            const std::vector<double>& defective);

/// One sweep per region. Throws kCalibration if a region lacks either class.
RegionThresholds calibrate_thresholds(const std::vector<LabeledScore>& calibration);

/// Reject iff score > threshold[region].
bool classify_patch(double score, int region, const RegionThresholds& thresholds);
/// Attaches a heatmap to rejected patches.
bool classify_patch(ScoredPatch& scored, const RegionThresholds& thresholds);

}  // namespace vialscan
