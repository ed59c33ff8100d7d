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

#include "vialscan/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

torch::Tensor stack_images(const std::vector<Image>& xs) {
  const int w = xs.front().width();
  const int h = xs.front().height();
  auto out = torch::empty({static_cast<int64_t>(xs.size()), 1, h, w}, torch::kFloat32);
  float* dst = out.data_ptr<float>();
  for (const auto& x : xs) {
    if (x.width() != w || x.height() != h) raise(ErrorCode::kDimension, "mixed patch sizes");
    std::copy(x.pixels().begin(), x.pixels().end(), dst);
    dst += x.size();
  }
  return out;
}

cv::Mat to_u8(const Image& img) {
  cv::Mat m(img.height(), img.width(), CV_8UC1);
  const auto px = img.pixels();
  for (int y = 0; y < img.height(); ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x) {
      row[x] = static_cast<std::uint8_t>(
          std::lround(px[static_cast<std::size_t>(y) * img.width() + x] * 255.0f));
    }
  }
  return m;
}

}  // namespace

Scorer::Scorer(Generator generator, SsimParams params, int chunk)
    : generator_(std::move(generator)), params_(params), chunk_(chunk) {
  if (!generator_) raise(ErrorCode::kModel, "scorer needs a generator");
  if (chunk_ < 1) raise(ErrorCode::kConfig, "chunk must be >= 1");
  params_.validate();
  generator_->eval();
}

int Scorer::image_size() const { return generator_->config.image_size; }

std::vector<Image> Scorer::reconstruct(const std::vector<Image>& xs) const {
  std::vector<Image> out;
  out.reserve(xs.size());
  for (std::size_t start = 0; start < xs.size(); start += static_cast<std::size_t>(chunk_)) {
    const std::size_t stop = std::min(xs.size(), start + static_cast<std::size_t>(chunk_));
    std::vector<Image> part(xs.begin() + static_cast<std::ptrdiff_t>(start),
                            xs.begin() + static_cast<std::ptrdiff_t>(stop));
    const auto y = generator_->reconstruct(stack_images(part), chunk_).contiguous();
    const float* src = y.data_ptr<float>();
    for (const auto& x : part) {
      out.push_back(Image::clamped(x.width(), x.height(), std::vector<float>(src, src + x.size())));
      src += x.size();
    }
  }
  return out;
}

ScoredPatch Scorer::score(const Image& x, const PatchId& id) const {
  return std::move(score(std::vector<Image>{x}, {id}).front());
}

std::vector<ScoredPatch> Scorer::score(const std::vector<Image>& xs,
                                       const std::vector<PatchId>& ids) const {
  if (!ids.empty() && ids.size() != xs.size()) raise(ErrorCode::kDimension, "one id per patch");
  std::vector<ScoredPatch> out;
  if (xs.empty()) return out;
  auto recon = reconstruct(xs);
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    ScoredPatch s;
    if (!ids.empty()) s.id = ids[i];
    s.score = 1.0 - ssim(xs[i], recon[i], params_);
    s.input = xs[i];
    s.reconstruction = std::move(recon[i]);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<double> Scorer::scores(const std::vector<Image>& xs) const {
  std::vector<double> out;
  if (xs.empty()) return out;
  const auto recon = reconstruct(xs);
  out.reserve(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) out.push_back(1.0 - ssim(xs[i], recon[i], params_));
  return out;
}

ScoredPatch score_patch(const Generator& generator, const Image& x, const SsimParams& params) {
  return Scorer(generator, params, 1).score(x);
}

Image heatmap(const Image& x, const Image& x_hat) {
  if (!x.same_shape(x_hat)) raise(ErrorCode::kDimension, "heatmap inputs differ in shape");
  std::vector<float> diff(x.size());
  const auto a = x.pixels();
  const auto b = x_hat.pixels();
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = std::fabs(a[i] - b[i]);
  return minmax_normalize(Image::clamped(x.width(), x.height(), std::move(diff)));
}

void save_overlay(const Image& x, const Image& x_hat, const std::filesystem::path& path) {
  if (!x.same_shape(x_hat)) raise(ErrorCode::kDimension, "overlay inputs differ in shape");
  std::vector<float> diff(x.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = std::fabs(x.pixels()[i] - x_hat.pixels()[i]);
  const Image residual = Image::clamped(x.width(), x.height(), std::move(diff));

  cv::Mat gray_x, gray_r, gray_d, heat, blend;
  cv::cvtColor(to_u8(x), gray_x, cv::COLOR_GRAY2BGR);
  cv::cvtColor(to_u8(x_hat), gray_r, cv::COLOR_GRAY2BGR);
  cv::cvtColor(to_u8(residual), gray_d, cv::COLOR_GRAY2BGR);
  cv::applyColorMap(to_u8(heatmap(x, x_hat)), heat, cv::COLORMAP_JET);
  cv::addWeighted(gray_x, 0.5, heat, 0.5, 0.0, blend);
  cv::Mat panel;
  cv::hconcat(std::vector<cv::Mat>{gray_x, gray_r, gray_d, blend}, panel);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), panel)) raise(ErrorCode::kIo, "cannot write " + path.string());
}

// --- thresholds -----------------------------------------------------------------

void RegionThresholds::validate() const {
  for (int r = 0; r < kRegionsPerVial; ++r) {
    const double t = values[static_cast<std::size_t>(r)];
    if (!(t > 0.0) || !std::isfinite(t)) {
      raise(ErrorCode::kConfig, "threshold for region R" + std::to_string(r) + " must be positive");
    }
  }
}

double RegionThresholds::at(int region) const {
  if (region < 0 || region >= kRegionsPerVial) {
    raise(ErrorCode::kConfig, "no threshold for region " + std::to_string(region));
  }
  return values[static_cast<std::size_t>(region)];
}

nlohmann::json RegionThresholds::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (int r = 0; r < kRegionsPerVial; ++r) j["R" + std::to_string(r)] = values[static_cast<std::size_t>(r)];
  return j;
}

RegionThresholds RegionThresholds::from_json(const nlohmann::json& j) {
  const auto& src = j.contains("thresholds") ? j.at("thresholds") : j;
  RegionThresholds t;
  for (int r = 0; r < kRegionsPerVial; ++r) {
    const std::string key = "R" + std::to_string(r);
    if (!src.contains(key) || !src.at(key).is_number()) {
      raise(ErrorCode::kConfig, "missing threshold for region " + key);
    }
    t.values[static_cast<std::size_t>(r)] = src.at(key).get<double>();
  }
  t.validate();
  return t;
}

RegionThresholds RegionThresholds::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "cannot open thresholds " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RegionThresholds::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
  nlohmann::json j = meta.is_object() ? meta : nlohmann::json::object();
  j["thresholds"] = to_json();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) raise(ErrorCode::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// --- calibration ----------------------------------------------------------------

double balanced_accuracy_at(const std::vector<double>& nominal,
                            const std::vector<double>& defective, double threshold) {
  if (nominal.empty() || defective.empty()) raise(ErrorCode::kCalibration, "need both classes");
  const auto tp = std::count_if(defective.begin(), defective.end(), [&](double s) { return s > threshold; });
  const auto tn = std::count_if(nominal.begin(), nominal.end(), [&](double s) { return s <= threshold; });
  return 0.5 * (static_cast<double>(tp) / static_cast<double>(defective.size()) +
                static_cast<double>(tn) / static_cast<double>(nominal.size()));
}

SweepResult sweep_threshold(const std::vector<double>& nominal,
                            const std::vector<double>& defective) {
  if (nominal.empty() || defective.empty()) raise(ErrorCode::kCalibration, "need both classes");
  struct Entry {
    double score;
    bool defective;
  };
  std::vector<Entry> all;
  all.reserve(nominal.size() + defective.size());
  for (double s : nominal) all.push_back({s, false});
  for (double s : defective) all.push_back({s, true});
  std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

  const double n_nom = static_cast<double>(nominal.size());
  const double n_def = static_cast<double>(defective.size());
  // Candidates in ascending order; counts of entries at or below each.
  std::size_t tn = 0;
  std::size_t fn = 0;
  SweepResult best{0.0, -1.0};
  auto consider = [&](double t) {
    if (!(t > 0.0)) return;
    const double ba = 0.5 * ((n_def - static_cast<double>(fn)) / n_def + static_cast<double>(tn) / n_nom);
    if (ba > best.balanced_accuracy) best = {t, ba};
  };
  consider(all.front().score / 2.0);
  std::size_t i = 0;
  while (i < all.size()) {
    const double s = all[i].score;
    while (i < all.size() && all[i].score == s) {
      (all[i].defective ? fn : tn) += 1;
      ++i;
    }
    const double t = i < all.size() ? s + (all[i].score - s) / 2.0
                                    : std::nextafter(s, std::numeric_limits<double>::infinity());
    consider(t);
  }
  if (best.balanced_accuracy < 0.0) {
    raise(ErrorCode::kCalibration, "no positive threshold candidate (all scores are zero)");
  }
  return best;
}

RegionThresholds calibrate_thresholds(const std::vector<LabeledScore>& calibration) {
  std::array<std::vector<double>, kRegionsPerVial> nominal, defective;
  for (const auto& c : calibration) {
    if (c.region < 0 || c.region >= kRegionsPerVial) raise(ErrorCode::kRange, "region out of range");
    (c.defective ? defective : nominal)[static_cast<std::size_t>(c.region)].push_back(c.score);
  }
  RegionThresholds out;
  for (int r = 0; r < kRegionsPerVial; ++r) {
    const auto ri = static_cast<std::size_t>(r);
    if (nominal[ri].empty() || defective[ri].empty()) {
      raise(ErrorCode::kCalibration, "region R" + std::to_string(r) + " lacks " +
                                         (nominal[ri].empty() ? "nominal" : "defective") + " samples");
    }
    out.values[ri] = sweep_threshold(nominal[ri], defective[ri]).threshold;
  }
  return out;
}

bool classify_patch(double score, int region, const RegionThresholds& thresholds) {
  return score > thresholds.at(region);
}

bool classify_patch(ScoredPatch& scored, const RegionThresholds& thresholds) {
  const bool reject = classify_patch(scored.score, scored.id.region, thresholds);
  if (reject) scored.heatmap = heatmap(scored.input, scored.reconstruction);
  return reject;
}

}  // namespace vialscan
