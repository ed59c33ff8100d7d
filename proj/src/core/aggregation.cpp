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

#include "vialscan/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <tuple>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

// Per-acquisition region maxima, the only statistic strip and run decisions use.
struct Compact {
  std::string strip;
  bool defective = false;
  std::array<double, kRegionsPerVial> region_max{};
};

std::vector<Compact> compact(const KitResults& kit) {
  std::vector<Compact> out;
  out.reserve(kit.acquisitions.size());
  for (const auto& acq : kit.acquisitions) {
    acq.validate();
    const auto it = kit.truth.find(acq.strip);
    if (it == kit.truth.end()) raise(ErrorCode::kData, "no ground truth for strip " + acq.strip);
    Compact c{acq.strip, it->second, {}};
    c.region_max.fill(-std::numeric_limits<double>::infinity());
    for (const auto& p : acq.patches) {
      auto& m = c.region_max[static_cast<std::size_t>(p.id.region)];
      m = std::max(m, p.score);
    }
    out.push_back(std::move(c));
  }
  return out;
}

bool rejects(const Compact& c, const RegionThresholds& t) {
  for (int r = 0; r < kRegionsPerVial; ++r) {
    if (c.region_max[static_cast<std::size_t>(r)] > t.values[static_cast<std::size_t>(r)]) return true;
  }
  return false;
}

ConfusionCounts strip_counts(const std::vector<Compact>& rows, const RegionThresholds& t) {
  ConfusionCounts c;
  for (const auto& row : rows) c.add(row.defective, rejects(row, t));
  return c;
}

ConfusionCounts run_counts(const std::vector<Compact>& rows, const RegionThresholds& t) {
  std::map<std::string, std::pair<bool, std::vector<bool>>> by_strip;
  for (const auto& row : rows) {
    auto& entry = by_strip[row.strip];
    entry.first = row.defective;
    entry.second.push_back(rejects(row, t));
  }
  ConfusionCounts c;
  for (const auto& [strip, entry] : by_strip) {
    const auto v = run_decision(strip, entry.second, entry.first);
    c.add(v.defective, v.predicted == Prediction::kDefective);
  }
  return c;
}

}  // namespace

void StripAcquisition::validate() const {
  if (patches.size() != static_cast<std::size_t>(kPatchesPerAcquisition)) {
    raise(ErrorCode::kDimension, "acquisition " + strip + "/" + std::to_string(run) + " holds " +
                                     std::to_string(patches.size()) + " patches, expected 60");
  }
  std::set<std::tuple<int, int, int>> seen;
  std::set<int> frames;
  for (const auto& p : patches) {
    p.id.validate();
    seen.emplace(p.id.frame, p.id.vial, p.id.region);
    frames.insert(p.id.frame);
  }
  if (seen.size() != patches.size() || frames.size() != static_cast<std::size_t>(kTestFrames)) {
    raise(ErrorCode::kDimension, "acquisition " + strip + "/" + std::to_string(run) +
                                     " is not 3 frames x 5 vials x 4 regions");
  }
}

VialScore vial_score(std::span<const PatchScore> patches) {
  if (patches.empty()) raise(ErrorCode::kRange, "vial score of an empty patch set");
  const auto it = std::max_element(patches.begin(), patches.end(),
                                   [](const PatchScore& a, const PatchScore& b) { return a.score < b.score; });
  return {it->score, it->id};
}

StripVerdict strip_decision(const StripAcquisition& acquisition, const RegionThresholds& thresholds) {
  acquisition.validate();
  thresholds.validate();
  StripVerdict v;
  v.worst = vial_score(acquisition.patches);
  v.region_max.fill(-std::numeric_limits<double>::infinity());
  v.vial_max.fill(-std::numeric_limits<double>::infinity());
  for (const auto& p : acquisition.patches) {
    auto& rm = v.region_max[static_cast<std::size_t>(p.id.region)];
    auto& vm = v.vial_max[static_cast<std::size_t>(p.id.vial)];
    rm = std::max(rm, p.score);
    vm = std::max(vm, p.score);
  }
  for (int r = 0; r < kRegionsPerVial; ++r) {
    if (v.region_max[static_cast<std::size_t>(r)] > thresholds.at(r)) v.reject = true;
  }
  return v;
}

ProductVerdict run_decision(const std::string& strip, const std::vector<bool>& run_rejects,
                            bool defective) {
  if (run_rejects.size() != static_cast<std::size_t>(kRunsPerProduct)) {
    raise(ErrorCode::kDimension, "strip " + strip + " has " + std::to_string(run_rejects.size()) +
                                     " runs, expected 10");
  }
  ProductVerdict v{strip, run_rejects, defective, 0, Prediction::kUndecided, false};
  const auto n_reject = static_cast<int>(std::count(run_rejects.begin(), run_rejects.end(), true));
  const int n_accept = kRunsPerProduct - n_reject;
  if (n_reject >= kAcceptanceRuns) v.predicted = Prediction::kDefective;
  if (n_accept >= kAcceptanceRuns) v.predicted = Prediction::kNominal;
  v.agreements = defective ? n_reject : n_accept;
  v.correct = v.agreements >= kAcceptanceRuns;
  return v;
}

const char* level_name(Level level) {
  switch (level) {
    case Level::kPatch: return "patch";
    case Level::kStrip: return "strip";
    case Level::kRun: return "run";
  }
  return "?";
}

Level parse_level(const std::string& name) {
  if (name == "patch") return Level::kPatch;
  if (name == "strip") return Level::kStrip;
  if (name == "run") return Level::kRun;
  raise(ErrorCode::kConfig, "unknown level '" + name + "' (patch|strip|run)");
}

double ConfusionCounts::accuracy() const { return ratio(tp + tn, total()); }
double ConfusionCounts::tpr() const { return ratio(tp, tp + fn); }
double ConfusionCounts::tnr() const { return ratio(tn, tn + fp); }

void ConfusionCounts::add(bool defective, bool rejected) {
  if (defective) {
    (rejected ? tp : fn) += 1;
  } else {
    (rejected ? fp : tn) += 1;
  }
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) raise(ErrorCode::kRange, "percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(values.size() - 1, lo + 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

TimingStats timing_stats(const std::vector<double>& batch_ms) {
  TimingStats s;
  if (batch_ms.empty()) return s;
  s.batches = batch_ms.size();
  double sum = 0.0;
  for (double t : batch_ms) sum += t;
  s.mean_batch_ms = sum / static_cast<double>(batch_ms.size());
  s.mean_frame_ms = s.mean_batch_ms / kPatchesPerAcquisition;
  s.p95_batch_ms = percentile(batch_ms, 95.0);
  s.p99_batch_ms = percentile(batch_ms, 99.0);
  s.max_batch_ms = *std::max_element(batch_ms.begin(), batch_ms.end());
  return s;
}

nlohmann::json TimingStats::to_json() const {
  return {{"batches", batches},           {"mean_batch_ms", mean_batch_ms},
          {"mean_frame_ms", mean_frame_ms}, {"p95_batch_ms", p95_batch_ms},
          {"p99_batch_ms", p99_batch_ms},   {"max_batch_ms", max_batch_ms}};
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j = {
      {"level", level_name(level)},
      {"positive_class", "defective"},
      {"thresholds", thresholds.to_json()},
      {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"tn", counts.tn}, {"fn", counts.fn}}},
      {"accuracy", counts.accuracy()},
      {"tpr", counts.tpr()},
      {"tnr", counts.tnr()},
      {"balanced_accuracy", counts.balanced_accuracy()}};
  if (timing) j["timing"] = timing->to_json();
  return j;
}

void MetricsReport::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) raise(ErrorCode::kIo, "cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

MetricsReport evaluate(const KitResults& kit, const RegionThresholds& thresholds, Level level) {
  if (kit.acquisitions.empty()) raise(ErrorCode::kData, "empty kit");
  thresholds.validate();
  MetricsReport report;
  report.level = level;
  report.thresholds = thresholds;
  if (!kit.batch_ms.empty()) report.timing = timing_stats(kit.batch_ms);
  switch (level) {
    case Level::kPatch:
      for (const auto& acq : kit.acquisitions) {
        acq.validate();
        for (const auto& p : acq.patches) {
          report.counts.add(p.defective, classify_patch(p.score, p.id.region, thresholds));
        }
      }
      break;
    case Level::kStrip:
      report.counts = strip_counts(compact(kit), thresholds);
      break;
    case Level::kRun:
      report.counts = run_counts(compact(kit), thresholds);
      break;
  }
  return report;
}

void write_patch_csv(const KitResults& kit, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) raise(ErrorCode::kIo, "cannot write " + path.string());
  out.precision(17);
  out << "strip,run,frame,vial,region,score,defective\n";
  for (const auto& acq : kit.acquisitions) {
    for (const auto& p : acq.patches) {
      out << p.id.strip << ',' << p.id.run << ',' << p.id.frame << ',' << p.id.vial << ','
          << p.id.region << ',' << p.score << ',' << (p.defective ? 1 : 0) << '\n';
    }
  }
}

RegionThresholds recalibrate(const KitResults& calibration, Level level,
                             const std::optional<RegionThresholds>& start) {
  if (calibration.acquisitions.empty()) raise(ErrorCode::kCalibration, "empty calibration kit");
  std::vector<LabeledScore> labeled;
  for (const auto& acq : calibration.acquisitions) {
    for (const auto& p : acq.patches) labeled.push_back({p.id.region, p.score, p.defective});
  }
  if (level == Level::kPatch) return calibrate_thresholds(labeled);
  RegionThresholds t = start ? *start : calibrate_thresholds(labeled);

  const auto rows = compact(calibration);
  auto objective = [&](const RegionThresholds& cand) {
    return (level == Level::kStrip ? strip_counts(rows, cand) : run_counts(rows, cand)).balanced_accuracy();
  };
  double best = objective(t);
  for (int round = 0; round < 50; ++round) {
    bool moved = false;
    for (int r = 0; r < kRegionsPerVial; ++r) {
      const auto ri = static_cast<std::size_t>(r);
      std::vector<double> values;
      values.reserve(rows.size());
      for (const auto& row : rows) values.push_back(row.region_max[ri]);
      std::sort(values.begin(), values.end());
      values.erase(std::unique(values.begin(), values.end()), values.end());
      std::vector<double> candidates;
      candidates.push_back(values.front() / 2.0);
      for (std::size_t i = 0; i + 1 < values.size(); ++i) {
        candidates.push_back(values[i] + (values[i + 1] - values[i]) / 2.0);
      }
      candidates.push_back(std::nextafter(values.back(), std::numeric_limits<double>::infinity()));
      RegionThresholds trial = t;
      double region_best = best;
      double region_arg = t.values[ri];
      for (double c : candidates) {
        if (!(c > 0.0)) continue;
        trial.values[ri] = c;
        const double ba = objective(trial);
        if (ba > region_best) {
          region_best = ba;
          region_arg = c;
        }
      }
      if (region_best > best) {
        best = region_best;
        t.values[ri] = region_arg;
        moved = true;
      }
    }
    if (!moved) break;
  }
  return t;
}

}  // namespace vialscan
