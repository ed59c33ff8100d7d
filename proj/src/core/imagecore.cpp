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

#include "vialscan/imagecore.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <utility>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

void check_dims(int width, int height) {
  if (width <= 0 || height <= 0) {
    raise(ErrorCode::kDimension, "image dimensions must be positive, got " +
                                     std::to_string(width) + "x" +
                                     std::to_string(height));
  }
}

// Reflect-101 index mapping: -1 -> 1, n -> n-2.
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

Image::Image(int width, int height, float fill) : width_(width), height_(height) {
  check_dims(width, height);
  if (!(fill >= 0.0f && fill <= 1.0f)) {
    raise(ErrorCode::kRange, "fill value outside [0,1]");
  }
  data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

Image::Image(int width, int height, std::vector<float> data)
    : width_(width), height_(height), data_(std::move(data)) {
  check_dims(width, height);
  if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    raise(ErrorCode::kDimension, "pixel buffer length " + std::to_string(data_.size()) +
                                     " does not match " + std::to_string(width) + "x" +
                                     std::to_string(height));
  }
  for (float v : data_) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      raise(ErrorCode::kRange, "pixel intensity outside [0,1]: " + std::to_string(v));
    }
  }
}

Image Image::clamped(int width, int height, std::vector<float> data) {
  for (float& v : data) {
    v = std::isnan(v) ? 0.0f : std::clamp(v, 0.0f, 1.0f);
  }
  return Image(width, height, std::move(data));
}

float Image::min() const {
  return data_.empty() ? 0.0f : *std::min_element(data_.begin(), data_.end());
}

float Image::max() const {
  return data_.empty() ? 0.0f : *std::max_element(data_.begin(), data_.end());
}

void FrameStack::validate() const {
  if (frames.empty()) raise(ErrorCode::kDimension, "frame stack is empty");
  for (const auto& f : frames) {
    if (!f.same_shape(frames.front())) {
      raise(ErrorCode::kDimension, "frame stack '" + acquisition_id +
                                       "' mixes frame dimensions");
    }
  }
}

void PatchId::validate() const {
  if (run < 0 || run > 9) raise(ErrorCode::kRange, "run index outside 0..9");
  if (frame < 0) raise(ErrorCode::kRange, "negative frame index");
  if (vial < 0 || vial >= kVialsPerStrip) raise(ErrorCode::kRange, "vial index outside 0..4");
  if (region < 0 || region >= kRegionsPerVial) {
    raise(ErrorCode::kRange, "region index outside 0..3");
  }
}

// --- layout -----------------------------------------------------------------

RegionLayout::RegionLayout(std::array<Rect, kPatchesPerImage> cells) : cells_(cells) {
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    const Rect& r = cells_[i];
    if (r.width <= 0 || r.height <= 0 || r.x < 0 || r.y < 0) {
      raise(ErrorCode::kGeometry, "layout cell " + std::to_string(i) +
                                      " has a negative origin or empty extent");
    }
    for (std::size_t j = 0; j < i; ++j) {
      if (r.overlaps(cells_[j])) {
        raise(ErrorCode::kGeometry, "layout cells " + std::to_string(j) + " and " +
                                        std::to_string(i) + " overlap");
      }
    }
  }
}

RegionLayout RegionLayout::uniform(int width, int height) {
  if (width < kVialsPerStrip || height < kRegionsPerVial) {
    raise(ErrorCode::kGeometry, "strip too small for a 5x4 grid");
  }
  std::array<Rect, kPatchesPerImage> cells{};
  for (int v = 0; v < kVialsPerStrip; ++v) {
    const int x0 = v * width / kVialsPerStrip;
    const int x1 = (v + 1) * width / kVialsPerStrip;
    for (int r = 0; r < kRegionsPerVial; ++r) {
      const int y0 = r * height / kRegionsPerVial;
      const int y1 = (r + 1) * height / kRegionsPerVial;
      cells[static_cast<std::size_t>(patch_slot(v, r))] = Rect{x0, y0, x1 - x0, y1 - y0};
    }
  }
  return RegionLayout(cells);
}

RegionLayout RegionLayout::from_json(const nlohmann::json& j) {
  try {
    const auto& list = j.at("cells");
    if (!list.is_array() || list.size() != kPatchesPerImage) {
      raise(ErrorCode::kGeometry, "layout must list exactly 20 cells");
    }
    std::array<Rect, kPatchesPerImage> cells{};
    std::set<int> seen;
    for (const auto& c : list) {
      const int v = c.at("vial").get<int>();
      const int r = c.at("region").get<int>();
      if (v < 0 || v >= kVialsPerStrip || r < 0 || r >= kRegionsPerVial) {
        raise(ErrorCode::kGeometry, "layout cell index out of range");
      }
      if (!seen.insert(patch_slot(v, r)).second) {
        raise(ErrorCode::kGeometry, "layout lists (vial " + std::to_string(v) +
                                        ", region " + std::to_string(r) + ") twice");
      }
      cells[static_cast<std::size_t>(patch_slot(v, r))] =
          Rect{c.at("x").get<int>(), c.at("y").get<int>(), c.at("w").get<int>(),
               c.at("h").get<int>()};
    }
    return RegionLayout(cells);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, std::string("malformed layout: ") + e.what());
  }
}

RegionLayout RegionLayout::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "cannot open layout file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, "layout file " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

nlohmann::json RegionLayout::to_json() const {
  nlohmann::json cells = nlohmann::json::array();
  for (int v = 0; v < kVialsPerStrip; ++v) {
    for (int r = 0; r < kRegionsPerVial; ++r) {
      const Rect& c = cell(v, r);
      cells.push_back({{"vial", v}, {"region", r}, {"x", c.x}, {"y", c.y},
                       {"w", c.width}, {"h", c.height}});
    }
  }
  return {{"cells", cells}};
}

void RegionLayout::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) raise(ErrorCode::kIo, "cannot write layout file " + path.string());
  out << to_json().dump(2) << "\n";
}

const Rect& RegionLayout::cell(int vial, int region) const {
  if (vial < 0 || vial >= kVialsPerStrip || region < 0 || region >= kRegionsPerVial) {
    raise(ErrorCode::kRange, "cell index out of range");
  }
  return cells_[static_cast<std::size_t>(patch_slot(vial, region))];
}

// --- operations -------------------------------------------------------------

Image rank_filter(const FrameStack& stack, int rank) {
  stack.validate();
  const int count = static_cast<int>(stack.size());
  if (rank < 1 || rank > count) {
    raise(ErrorCode::kRange, "rank " + std::to_string(rank) + " outside [1, " +
                                 std::to_string(count) + "]");
  }
  const Image& first = stack.frames.front();
  std::vector<float> out(first.size());
  std::vector<float> column(static_cast<std::size_t>(count));
  const auto nth = column.begin() + (rank - 1);
  for (std::size_t i = 0; i < out.size(); ++i) {
    for (int k = 0; k < count; ++k) {
      column[static_cast<std::size_t>(k)] = stack.frames[static_cast<std::size_t>(k)].pixels()[i];
    }
    std::nth_element(column.begin(), nth, column.end());
    out[i] = *nth;
  }
  return Image(first.width(), first.height(), std::move(out));
}

Image crop(const Image& image, const Rect& rect) {
  if (rect.width <= 0 || rect.height <= 0 || rect.x < 0 || rect.y < 0 ||
      rect.x + rect.width > image.width() || rect.y + rect.height > image.height()) {
    raise(ErrorCode::kGeometry,
          "rectangle (" + std::to_string(rect.x) + "," + std::to_string(rect.y) + " " +
              std::to_string(rect.width) + "x" + std::to_string(rect.height) +
              ") outside " + std::to_string(image.width()) + "x" +
              std::to_string(image.height()) + " image");
  }
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(rect.width) * static_cast<std::size_t>(rect.height));
  for (int y = rect.y; y < rect.y + rect.height; ++y) {
    for (int x = rect.x; x < rect.x + rect.width; ++x) out.push_back(image.at(x, y));
  }
  return Image(rect.width, rect.height, std::move(out));
}

Image resize_bilinear(const Image& image, int width, int height) {
  check_dims(width, height);
  if (image.width() == width && image.height() == height) return image;
  const double sx = static_cast<double>(image.width()) / width;
  const double sy = static_cast<double>(image.height()) / height;
  const int max_x = image.width() - 1;
  const int max_y = image.height() - 1;
  std::vector<float> out(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(max_y));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, max_y);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(max_x));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, max_x);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * image.at(x0, y0) + wx * image.at(x1, y0);
      const double bottom = (1.0 - wx) * image.at(x0, y1) + wx * image.at(x1, y1);
      out[static_cast<std::size_t>(y) * width + x] =
          static_cast<float>((1.0 - wy) * top + wy * bottom);
    }
  }
  return Image::clamped(width, height, std::move(out));
}

PatchGrid extract_patches(const Image& image, const RegionLayout& layout, int patch_size) {
  PatchGrid grid;
  grid.source_width = image.width();
  grid.source_height = image.height();
  for (int v = 0; v < kVialsPerStrip; ++v) {
    for (int r = 0; r < kRegionsPerVial; ++r) {
      grid.patches[static_cast<std::size_t>(patch_slot(v, r))] =
          resize_bilinear(crop(image, layout.cell(v, r)), patch_size, patch_size);
    }
  }
  return grid;
}

AugmentDraw draw_augment(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> angle(-kMaxAugmentRotation, kMaxAugmentRotation);
  std::bernoulli_distribution coin(0.5);
  AugmentDraw d;
  d.theta = angle(rng);
  d.flip = coin(rng);
  return d;
}

Image rotate_reflect(const Image& image, double theta) {
  if (theta == 0.0) return image;
  const int w = image.width();
  const int h = image.height();
  const double cx = 0.5 * (w - 1);
  const double cy = 0.5 * (h - 1);
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  std::vector<float> out(image.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map: output pixel -> source coordinate.
      const double dx = x - cx;
      const double dy = y - cy;
      const double src_x = c * dx + s * dy + cx;
      const double src_y = -s * dx + c * dy + cy;
      const double fx = std::floor(src_x);
      const double fy = std::floor(src_y);
      const double wx = src_x - fx;
      const double wy = src_y - fy;
      const int x0 = static_cast<int>(fx);
      const int y0 = static_cast<int>(fy);
      const int ax = reflect_index(x0, w);
      const int bx = reflect_index(x0 + 1, w);
      const int ay = reflect_index(y0, h);
      const int by = reflect_index(y0 + 1, h);
      const double top = (1.0 - wx) * image.at(ax, ay) + wx * image.at(bx, ay);
      const double bottom = (1.0 - wx) * image.at(ax, by) + wx * image.at(bx, by);
      out[static_cast<std::size_t>(y) * w + x] = static_cast<float>((1.0 - wy) * top + wy * bottom);
    }
  }
  return Image::clamped(w, h, std::move(out));
}

Image flip_vertical(const Image& image) {
  const int w = image.width();
  const int h = image.height();
  std::vector<float> out(image.size());
  const auto src = image.pixels();
  for (int y = 0; y < h; ++y) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(h - 1 - y) * w, w,
                out.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  return Image(w, h, std::move(out));
}

Image apply_augment(const Image& patch, const AugmentDraw& draw) {
  if (std::abs(draw.theta) > kMaxAugmentRotation) {
    raise(ErrorCode::kRange, "augmentation rotation exceeds pi/8");
  }
  Image out = rotate_reflect(patch, draw.theta);
  return draw.flip ? flip_vertical(out) : out;
}

Image augment(const Image& patch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return apply_augment(patch, draw_augment(rng));
}

Image minmax_normalize(const Image& image) {
  if (image.empty()) raise(ErrorCode::kDimension, "cannot normalize an empty image");
  const float lo = image.min();
  const float hi = image.max();
  if (!(hi > lo)) return Image(image.width(), image.height(), 0.0f);
  const double span = static_cast<double>(hi) - lo;
  std::vector<float> out(image.size());
  const auto src = image.pixels();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>((static_cast<double>(src[i]) - lo) / span);
  }
  return Image::clamped(image.width(), image.height(), std::move(out));
}

Image load_png(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_ANYDEPTH | cv::IMREAD_GRAYSCALE);
  if (m.empty()) raise(ErrorCode::kIo, "cannot read image " + path.string());
  double scale = 0.0;
  if (m.depth() == CV_8U) {
    scale = 1.0 / 255.0;
  } else if (m.depth() == CV_16U) {
    scale = 1.0 / 65535.0;
  } else {
    raise(ErrorCode::kData, "unsupported PNG depth in " + path.string());
  }
  cv::Mat f;
  m.convertTo(f, CV_32F, scale);
  std::vector<float> data(static_cast<std::size_t>(f.rows) * static_cast<std::size_t>(f.cols));
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    std::copy_n(row, f.cols, data.begin() + static_cast<std::ptrdiff_t>(y) * f.cols);
  }
  return Image::clamped(f.cols, f.rows, std::move(data));
}

void save_png(const Image& image, const std::filesystem::path& path, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) raise(ErrorCode::kConfig, "PNG depth must be 8 or 16");
  const double scale = bit_depth == 8 ? 255.0 : 65535.0;
  cv::Mat m(image.height(), image.width(), bit_depth == 8 ? CV_8U : CV_16U);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double v = std::round(image.at(x, y) * scale);
      if (bit_depth == 8) {
        m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(v);
      } else {
        m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) raise(ErrorCode::kIo, "cannot write " + path.string());
}

}  // namespace vialscan
