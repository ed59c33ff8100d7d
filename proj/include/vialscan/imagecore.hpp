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
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace vialscan {

inline constexpr int kVialsPerStrip = 5;
inline constexpr int kRegionsPerVial = 4;
inline constexpr int kPatchesPerImage = kVialsPerStrip * kRegionsPerVial;
inline constexpr int kDefaultPatchSize = 256;

/// Single-channel raster with intensities in [0,1], row-major.
///
/// The range invariant is checked on construction; code that renders or
/// accumulates values works on plain buffers and converts through
/// Image::clamped().
class Image {
 public:
  Image() = default;
  Image(int width, int height, float fill = 0.0f);
  /// Throws kDimension on a size mismatch and kRange on values outside [0,1].
  Image(int width, int height, std::vector<float> data);

  static Image clamped(int width, int height, std::vector<float> data);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return 1; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float at(int x, int y) const { return data_[index(x, y)]; }
  std::span<const float> pixels() const noexcept { return data_; }
  const std::vector<float>& vector() const noexcept { return data_; }

  float min() const;
  float max() const;

  bool same_shape(const Image& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }
  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t index(int x, int y) const noexcept {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> data_;
};

/// Frames of one acquisition, all with identical dimensions.
struct FrameStack {
  std::vector<Image> frames;
  std::string acquisition_id;

  std::size_t size() const noexcept { return frames.size(); }
  void validate() const;
};

struct PatchId {
  std::string strip;
  int run = 0;
  int frame = 0;
  int vial = 0;
  int region = 0;

  void validate() const;
  friend bool operator==(const PatchId&, const PatchId&) = default;
};

struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  bool contains(int px, int py) const noexcept {
    return px >= x && py >= y && px < x + width && py < y + height;
  }
  bool overlaps(const Rect& o) const noexcept {
    return x < o.x + o.width && o.x < x + width && y < o.y + o.height &&
           o.y < y + height;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Pixel rectangles for the 5 vial columns x 4 region bands of one product.
/// Regions, top to bottom: flag, top body, liquid body, bottom.
class RegionLayout {
 public:
  RegionLayout() = default;
  explicit RegionLayout(std::array<Rect, kPatchesPerImage> cells);

  /// Even 5x4 grid covering a width x height strip.
  static RegionLayout uniform(int width, int height);
  static RegionLayout from_json(const nlohmann::json& j);
  static RegionLayout load(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  const Rect& cell(int vial, int region) const;
  const std::array<Rect, kPatchesPerImage>& cells() const noexcept {
    return cells_;
  }

 private:
  std::array<Rect, kPatchesPerImage> cells_{};
};

inline constexpr int patch_slot(int vial, int region) {
  return vial * kRegionsPerVial + region;
}

/// The 20 patches of one image, indexed by (vial, region).
struct PatchGrid {
  std::array<Image, kPatchesPerImage> patches;
  int source_width = 0;
  int source_height = 0;

  const Image& at(int vial, int region) const {
    return patches.at(static_cast<std::size_t>(patch_slot(vial, region)));
  }
};

/// Per-pixel order statistic across the frames of a stack. rank is 1-based:
/// 1 is the per-pixel minimum, stack.size() the maximum.
Image rank_filter(const FrameStack& stack, int rank);

Image crop(const Image& image, const Rect& rect);

/// Bilinear resampling with pixel-center alignment.
Image resize_bilinear(const Image& image, int width, int height);

PatchGrid extract_patches(const Image& image, const RegionLayout& layout,
                          int patch_size = kDefaultPatchSize);

struct AugmentDraw {
  double theta = 0.0;  // radians, within [-pi/8, pi/8]
  bool flip = false;   // vertical flip (row i -> row H-1-i)
};

inline constexpr double kMaxAugmentRotation = 0.39269908169872414;  // pi/8

AugmentDraw draw_augment(std::mt19937_64& rng);

/// Rotation about the image center with reflected borders and bilinear
/// sampling; output clamped to [0,1].
Image rotate_reflect(const Image& image, double theta);
Image flip_vertical(const Image& image);
Image apply_augment(const Image& patch, const AugmentDraw& draw);
Image augment(const Image& patch, std::uint64_t seed);

/// Rescales to [0,1]. A flat image maps to all zeros.
Image minmax_normalize(const Image& image);

/// 8- or 16-bit grayscale PNG, scaled by 1/255 or 1/65535.
Image load_png(const std::filesystem::path& path);
void save_png(const Image& image, const std::filesystem::path& path,
              int bit_depth = 8);

}  // namespace vialscan
