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

#include <filesystem>
#include <fstream>
#include <set>

#include "testing.hpp"
#include "vialscan/error.hpp"
#include "vialscan/synthkit.hpp"

using namespace vialscan;

namespace {

StripSpec spec_with_seed(std::uint64_t seed) {
  StripSpec s;
  s.seed = seed;
  return s;
}

double region_abs_diff(const Image& a, const Image& b, const Rect& r) {
  double sum = 0.0;
  for (int y = r.y; y < r.y + r.height; ++y) {
    for (int x = r.x; x < r.x + r.width; ++x) sum += std::abs(a.at(x, y) - b.at(x, y));
  }
  return sum;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("nominal strips are deterministic per seed") {
  const auto a = gen_nominal_strip(spec_with_seed(1), 5);
  const auto b = gen_nominal_strip(spec_with_seed(1), 5);
  const auto c = gen_nominal_strip(spec_with_seed(1), 6);
  REQUIRE(a.frames.size() == 16);
  for (std::size_t i = 0; i < 16; ++i) CHECK(a.frames[i] == b.frames[i]);
  CHECK_FALSE(a.frames[0] == c.frames[0]);
  for (const auto& f : a.frames) {
    CHECK(f.min() >= 0.0f);
    CHECK(f.max() <= 1.0f);
  }
}

TEST_CASE("without moving content frames differ only by lighting") {
  StripSpec s = spec_with_seed(2);
  s.bubbles_min = 0;
  s.bubbles_max = 0;
  s.droplets_max = 0;
  s.sway_max = 0.0;
  s.noise_sigma = 0.0;
  const auto stack = gen_nominal_strip(s, 3);
  const Image& f0 = stack.frames[0];
  for (std::size_t k = 1; k < stack.frames.size(); ++k) {
    const Image& fk = stack.frames[k];
    double num = 0, den = 0;
    for (std::size_t i = 0; i < f0.size(); ++i) {
      num += double(f0.pixels()[i]) * fk.pixels()[i];
      den += double(f0.pixels()[i]) * f0.pixels()[i];
    }
    const double gain = num / den;
    double worst = 0;
    for (std::size_t i = 0; i < f0.size(); ++i) {
      const double want = std::min(1.0, gain * f0.pixels()[i]);
      worst = std::max(worst, std::abs(want - fk.pixels()[i]));
    }
    CHECK(worst < 2e-3);
  }
}

TEST_CASE("rank residual concentrates in the liquid band") {
  const StripSpec s = spec_with_seed(3);
  const auto stack = gen_nominal_strip(s, 4);
  const Image lo = rank_filter(stack, 1);
  const Image hi = rank_filter(stack, 16);
  const auto layout = s.layout();
  double liquid = 0, rest = 0;
  for (int v = 0; v < kVialsPerStrip; ++v) {
    for (int r = 0; r < kRegionsPerVial; ++r) {
      const double m = region_abs_diff(lo, hi, layout.cell(v, r));
      (r >= 2 ? liquid : rest) += m;
    }
  }
  CHECK(liquid > rest);
}

TEST_CASE("liquid varies more across frames than the flag") {
  const StripSpec s = spec_with_seed(4);
  const auto stack = gen_nominal_strip(s, 9);
  const auto layout = s.layout();
  auto temporal_variance = [&](int region) {
    double total = 0;
    for (int v = 0; v < kVialsPerStrip; ++v) {
      const Rect r = layout.cell(v, region);
      for (int y = r.y; y < r.y + r.height; ++y) {
        for (int x = r.x; x < r.x + r.width; ++x) {
          double m = 0, q = 0;
          for (const auto& f : stack.frames) {
            m += f.at(x, y);
            q += double(f.at(x, y)) * f.at(x, y);
          }
          m /= 16;
          total += q / 16 - m * m;
        }
      }
    }
    return total;
  };
  CHECK(temporal_variance(3) > temporal_variance(0));
}

TEST_CASE("zero magnitude defect leaves the stack unchanged") {
  const StripSpec s = spec_with_seed(5);
  const auto stack = gen_nominal_strip(s, 1);
  for (int k = 0; k < kDefectKinds; ++k) {
    const auto out = inject_defect(stack, {static_cast<DefectKind>(k), 1, 2, 0.0, 7}, s.layout());
    for (std::size_t i = 0; i < 16; ++i) CHECK(out.frames[i] == stack.frames[i]);
  }
}

TEST_CASE("defects are static, confined to their cell and scale with magnitude") {
  const StripSpec s = spec_with_seed(6);
  const auto layout = s.layout();
  const auto stack = gen_nominal_strip(s, 2);
  for (int k = 0; k < kDefectKinds; ++k) {
    const DefectKind kind = static_cast<DefectKind>(k);
    INFO(std::string(defect_kind_name(kind)));
    const DefectSpec d{kind, 3, 1, 0.8, 11};
    const auto out = inject_defect(stack, d, layout);
    const Rect cell = layout.cell(3, 1);
    double first_mass = -1;
    for (std::size_t f = 0; f < 16; ++f) {
      const Image& a = stack.frames[f];
      const Image& b = out.frames[f];
      double outside = 0;
      for (int y = 0; y < a.height(); ++y) {
        for (int x = 0; x < a.width(); ++x) {
          const bool in = x >= cell.x && x < cell.x + cell.width && y >= cell.y && y < cell.y + cell.height;
          if (!in) outside += std::abs(a.at(x, y) - b.at(x, y));
        }
      }
      CHECK(outside == 0.0);
      const double mass = region_abs_diff(a, b, cell);
      CHECK(mass >= 2.0 * d.magnitude);
      if (first_mass < 0) first_mass = mass;
    }
    const auto weak = inject_defect(stack, {kind, 3, 1, 0.2, 11}, layout);
    CHECK(region_abs_diff(stack.frames[0], weak.frames[0], cell) < first_mass);
  }
}

TEST_CASE("stuck particle core is identical in every frame") {
  const StripSpec s = spec_with_seed(7);
  const auto stack = gen_nominal_strip(s, 3);
  const auto out = inject_defect(stack, {DefectKind::kStuckParticle, 0, 2, 1.0, 5}, s.layout());
  const Rect cell = s.layout().cell(0, 2);
  std::vector<std::pair<int, int>> core;
  for (int y = cell.y; y < cell.y + cell.height; ++y) {
    for (int x = cell.x; x < cell.x + cell.width; ++x) {
      if (stack.frames[0].at(x, y) - out.frames[0].at(x, y) > 0.1f) core.emplace_back(x, y);
    }
  }
  CHECK(core.size() >= 4);
  std::size_t constant = 0;
  for (const auto& [x, y] : core) {
    bool same = true;
    for (const auto& f : out.frames) same = same && f.at(x, y) == out.frames[0].at(x, y);
    constant += same ? 1 : 0;
  }
  // Fully covered pixels are constant; only the antialiased rim may vary.
  CHECK(constant >= core.size() / 3);
  for (std::size_t f = 1; f < 16; ++f) {
    std::size_t covered = 0;
    for (const auto& [x, y] : core) covered += stack.frames[f].at(x, y) - out.frames[f].at(x, y) > 0.05f ? 1 : 0;
    CHECK(covered == core.size());
  }
}

TEST_CASE("defect kinds parse by name") {
  for (int k = 0; k < kDefectKinds; ++k) {
    const auto kind = static_cast<DefectKind>(k);
    CHECK(parse_defect_kind(defect_kind_name(kind)) == kind);
  }
  try {
    parse_defect_kind("crack");
    FAIL("expected a config error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfig);
  }
}

TEST_CASE("test frames are first, eighth and last") {
  CHECK((test_frame_indices(16) == std::vector<int>{0, 7, 15}));
}

TEST_CASE("default plan mirrors the reference kit and keeps splits disjoint") {
  const auto m = plan_kit(KitCounts{}, StripSpec{}, 1);
  int test_def = 0, test_nom = 0;
  std::set<std::string> ids;
  for (const auto& s : m.strips) {
    CHECK(ids.insert(s.id).second);
    if (s.split == "train") {
      CHECK_FALSE(s.defective);
      CHECK(s.defects.empty());
    }
    if (s.split == "test") (s.defective ? test_def : test_nom) += 1;
    CHECK(s.defective == !s.defects.empty());
  }
  CHECK(test_def == 141);
  CHECK(test_nom == 120);
  CHECK(m.split("train").size() == 50);
  CHECK(m.split("calibration").size() == 60);
  CHECK(m.split("test").front()->run_seeds.size() == 10);
  const auto again = plan_kit(KitCounts{}, StripSpec{}, 1);
  CHECK((again.strips == m.strips));
}

TEST_CASE("manifest replay regenerates identical files") {
  const auto root = std::filesystem::temp_directory_path() / "vialscan_test_kit";
  std::filesystem::remove_all(root);
  KitCounts c;
  c.train = 1;
  c.train_runs = 1;
  c.cal_defective = c.cal_nominal = 1;
  c.test_defective = c.test_nominal = 1;
  c.eval_runs = 2;
  const auto m = build_kit(root, c, StripSpec{}, 9, 2);
  const auto loaded = KitManifest::load(root);
  CHECK((loaded.strips == m.strips));
  const auto& strip = *m.split("test").front();
  const auto dir = run_dir(root, strip, 1);
  CHECK(std::filesystem::exists(dir / frame_file(7)));
  CHECK_FALSE(std::filesystem::exists(dir / frame_file(3)));
  CHECK(std::filesystem::exists(run_dir(root, *m.split("train").front(), 0) / "rank_max.png"));
  const auto before = slurp(dir / frame_file(15));
  std::filesystem::remove_all(dir);
  write_strip(root, loaded, strip);
  CHECK(slurp(dir / frame_file(15)) == before);
  const Image img = load_png(dir / frame_file(0));
  CHECK(img.width() == 320);
  CHECK(img.height() == 256);
}
