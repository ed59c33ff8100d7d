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

#include <algorithm>
#include <filesystem>
#include <random>

#include "testing.hpp"
#include "oracles.hpp"
#include "vialscan/error.hpp"
#include "vialscan/imagecore.hpp"

using namespace vialscan;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("vialscan_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kRange;
}

}  // namespace

TEST_CASE("image construction enforces range and size") {
  CHECK(code_of([] { Image(2, 2, std::vector<float>{0, 0.5f, 1, 1.5f}); }) == ErrorCode::kRange);
  CHECK(code_of([] { Image(2, 2, std::vector<float>{0, 0, 0}); }) == ErrorCode::kDimension);
  const Image c = Image::clamped(2, 1, {-0.5f, 2.0f});
  CHECK(c.at(0, 0) == 0.0f);
  CHECK(c.at(1, 0) == 1.0f);
}

TEST_CASE("rank filter matches a per-pixel sort") {
  std::mt19937_64 rng(3);
  FrameStack stack;
  for (int i = 0; i < 7; ++i) stack.frames.push_back(oracle::random_image(9, 5, rng));
  for (int rank = 1; rank <= 7; ++rank) {
    const Image out = rank_filter(stack, rank);
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 9; ++x) {
        std::vector<float> v;
        for (const auto& f : stack.frames) v.push_back(f.at(x, y));
        std::sort(v.begin(), v.end());
        CHECK(out.at(x, y) == v[static_cast<std::size_t>(rank - 1)]);
      }
    }
  }
  CHECK(code_of([&] { rank_filter(stack, 0); }) == ErrorCode::kRange);
  CHECK(code_of([&] { rank_filter(stack, 8); }) == ErrorCode::kRange);
}

TEST_CASE("rank 1 of a stack is never above rank A") {
  std::mt19937_64 rng(4);
  FrameStack stack;
  for (int i = 0; i < 16; ++i) stack.frames.push_back(oracle::random_image(12, 12, rng));
  const Image lo = rank_filter(stack, 1);
  const Image hi = rank_filter(stack, 16);
  for (std::size_t i = 0; i < lo.size(); ++i) CHECK(lo.pixels()[i] <= hi.pixels()[i]);
}

TEST_CASE("crop outside the frame is a geometry error") {
  const Image img(10, 10, 0.5f);
  CHECK(crop(img, {2, 3, 4, 5}).width() == 4);
  CHECK(code_of([&] { crop(img, {8, 0, 4, 4}); }) == ErrorCode::kGeometry);
}

TEST_CASE("uniform layout tiles the strip and patches land in their cells") {
  const RegionLayout layout = RegionLayout::uniform(320, 256);
  std::vector<float> px(320 * 256);
  for (int y = 0; y < 256; ++y) {
    for (int x = 0; x < 320; ++x) px[static_cast<std::size_t>(y) * 320 + x] = ((x / 64) * 4 + (y / 64)) / 19.0f;
  }
  const Image img(320, 256, std::move(px));
  const PatchGrid grid = extract_patches(img, layout, 64);
  for (int v = 0; v < 5; ++v) {
    for (int r = 0; r < 4; ++r) {
      const Image& p = grid.at(v, r);
      CHECK(p.width() == 64);
      CHECK(p.min() == doctest::Approx((v * 4 + r) / 19.0));
      CHECK(p.max() == doctest::Approx((v * 4 + r) / 19.0));
    }
  }
}

TEST_CASE("layout json round trip and overlap rejection") {
  const RegionLayout layout = RegionLayout::uniform(320, 256);
  CHECK(RegionLayout::from_json(layout.to_json()).cells() == layout.cells());
  auto cells = layout.cells();
  cells[1] = cells[0];
  CHECK(code_of([&] { RegionLayout{cells}; }) == ErrorCode::kGeometry);
}

TEST_CASE("resize to the same size is the identity") {
  std::mt19937_64 rng(5);
  const Image img = oracle::random_image(17, 11, rng);
  CHECK(resize_bilinear(img, 17, 11) == img);
}

TEST_CASE("zero rotation and double flip are identities") {
  std::mt19937_64 rng(6);
  const Image img = oracle::random_image(16, 16, rng);
  CHECK(rotate_reflect(img, 0.0) == img);
  CHECK(flip_vertical(flip_vertical(img)) == img);
  const Image f = flip_vertical(img);
  CHECK(f.at(3, 0) == img.at(3, 15));
}

TEST_CASE("rotation keeps a constant image constant") {
  const Image flat(20, 20, 0.4f);
  const Image r = rotate_reflect(flat, 0.3);
  CHECK(r.min() == doctest::Approx(0.4));
  CHECK(r.max() == doctest::Approx(0.4));
}

TEST_CASE("augmentation draws stay within the rotation bound") {
  std::mt19937_64 rng(7);
  int flips = 0;
  for (int i = 0; i < 2000; ++i) {
    const AugmentDraw d = draw_augment(rng);
    CHECK(std::abs(d.theta) <= kMaxAugmentRotation);
    flips += d.flip ? 1 : 0;
  }
  CHECK(flips > 900);
  CHECK(flips < 1100);
  CHECK(code_of([] { apply_augment(Image(8, 8), {0.5, false}); }) == ErrorCode::kRange);
}

TEST_CASE("min-max normalization") {
  CHECK(minmax_normalize(Image(4, 4, 0.3f)) == Image(4, 4, 0.0f));
  const Image n = minmax_normalize(Image(3, 1, std::vector<float>{0.2f, 0.4f, 0.6f}));
  CHECK(n.at(0, 0) == 0.0f);
  CHECK(n.at(1, 0) == doctest::Approx(0.5));
  CHECK(n.at(2, 0) == 1.0f);
}

TEST_CASE("png round trip") {
  const auto dir = temp_dir("png");
  std::mt19937_64 rng(8);
  const Image img = oracle::random_image(13, 7, rng);
  save_png(img, dir / "a16.png", 16);
  save_png(img, dir / "a8.png", 8);
  const Image a16 = load_png(dir / "a16.png");
  const Image a8 = load_png(dir / "a8.png");
  REQUIRE(a16.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) {
    CHECK(std::abs(a16.pixels()[i] - img.pixels()[i]) <= 0.5f / 65535.0f + 1e-7f);
    CHECK(std::abs(a8.pixels()[i] - img.pixels()[i]) <= 0.5f / 255.0f + 1e-7f);
  }
  CHECK(code_of([&] { load_png(dir / "missing.png"); }) == ErrorCode::kIo);
}

TEST_CASE("patch ids validate their ranges") {
  CHECK_NOTHROW(PatchId({"s", 0, 0, 4, 3}).validate());
  CHECK(code_of([] { PatchId{"s", 0, 0, 5, 0}.validate(); }) == ErrorCode::kRange);
  CHECK(code_of([] { PatchId{"s", 0, 0, 0, 4}.validate(); }) == ErrorCode::kRange);
}
