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
#include <random>

#include "testing.hpp"
#include "oracles.hpp"
#include "vialscan/aggregation.hpp"
#include "vialscan/error.hpp"

using namespace vialscan;

namespace {

StripAcquisition random_acquisition(const std::string& strip, int run, std::mt19937_64& rng, double hi = 0.05) {
  std::uniform_real_distribution<double> u(0.0, hi);
  StripAcquisition a{strip, run, {}};
  for (int f = 0; f < kTestFrames; ++f) {
    for (int v = 0; v < kVialsPerStrip; ++v) {
      for (int r = 0; r < kRegionsPerVial; ++r) a.patches.push_back({{strip, run, f, v, r}, u(rng), false});
    }
  }
  return a;
}

bool oracle_strip(const StripAcquisition& a, const RegionThresholds& t) {
  std::vector<std::pair<int, double>> rs;
  for (const auto& p : a.patches) rs.emplace_back(p.id.region, p.score);
  return oracle::strip_rejects(rs, t.values.data());
}

}  // namespace

TEST_CASE("vial score is the maximum") {
  std::vector<PatchScore> ps;
  for (double s : {0.01, 0.09, 0.03}) ps.push_back({{"s", 0, 0, 0, static_cast<int>(ps.size())}, s, false});
  const auto v = vial_score(ps);
  CHECK(v.theta == 0.09);
  CHECK(v.argmax.region == 1);
  std::vector<PatchScore> zeros(5);
  CHECK(vial_score(zeros).theta == 0.0);
  CHECK_THROWS_AS(vial_score(std::span<const PatchScore>{}), Error);
}

TEST_CASE("acquisitions must hold 60 distinct patches") {
  std::mt19937_64 rng(1);
  auto a = random_acquisition("s", 0, rng);
  CHECK_NOTHROW(a.validate());
  a.patches[5].id = a.patches[4].id;
  CHECK_THROWS_AS(a.validate(), Error);
  a.patches.pop_back();
  CHECK_THROWS_AS(strip_decision(a, RegionThresholds{{0.1, 0.1, 0.1, 0.1}}), Error);
}

TEST_CASE("strip decision examples") {
  std::mt19937_64 rng(2);
  auto a = random_acquisition("s", 0, rng, 0.01);
  const RegionThresholds t{{0.015589, 0.02, 0.046568, 0.029593}};
  CHECK_FALSE(strip_decision(a, t).reject);
  for (auto& p : a.patches) {
    if (p.id.region == 3 && p.id.vial == 2 && p.id.frame == 1) p.score = 0.03;
  }
  const auto v = strip_decision(a, t);
  CHECK(v.reject);
  CHECK(v.worst.argmax.vial == 2);
  CHECK(v.region_max[3] == 0.03);
}

TEST_CASE("strip decision matches the brute-force scan") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.02, 0.05);
  for (int i = 0; i < 300; ++i) {
    const auto a = random_acquisition("s", 0, rng);
    const RegionThresholds t{{u(rng), u(rng), u(rng), u(rng)}};
    const auto v = strip_decision(a, t);
    CHECK(v.reject == oracle_strip(a, t));
    bool by_region = false;
    for (int r = 0; r < 4; ++r) by_region = by_region || v.region_max[static_cast<std::size_t>(r)] > t.values[static_cast<std::size_t>(r)];
    CHECK(v.reject == by_region);
  }
}

TEST_CASE("raising a threshold never adds rejections") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.02, 0.05);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_acquisition("s", 0, rng);
    RegionThresholds t{{u(rng), u(rng), u(rng), u(rng)}};
    const bool before = strip_decision(a, t).reject;
    t.values[static_cast<std::size_t>(i % 4)] += 0.01;
    if (!before) CHECK_FALSE(strip_decision(a, t).reject);
  }
}

TEST_CASE("seven of ten boundary") {
  for (int agree = 0; agree <= 10; ++agree) {
    for (bool defective : {false, true}) {
      std::vector<bool> runs(10, !defective);
      for (int i = 0; i < agree; ++i) runs[static_cast<std::size_t>(i)] = defective;
      const auto v = run_decision("s", runs, defective);
      CHECK(v.agreements == agree);
      CHECK(v.correct == (agree >= 7));
      CHECK(v.correct == oracle::product_correct(runs, defective));
    }
  }
  CHECK_THROWS_AS(run_decision("s", std::vector<bool>(9, true), true), Error);
}

TEST_CASE("run decision is symmetric under permutation") {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution b(0.6);
  for (int i = 0; i < 200; ++i) {
    std::vector<bool> runs(10);
    for (std::size_t k = 0; k < 10; ++k) runs[k] = b(rng);
    const bool truth = b(rng);
    const auto a = run_decision("s", runs, truth);
    std::shuffle(runs.begin(), runs.end(), rng);
    const auto c = run_decision("s", runs, truth);
    CHECK(a.correct == c.correct);
    CHECK(a.predicted == c.predicted);
  }
}

TEST_CASE("confusion arithmetic") {
  ConfusionCounts c{9, 4, 16, 1};
  CHECK(c.tpr() == doctest::Approx(0.9));
  CHECK(c.tnr() == doctest::Approx(0.8));
  CHECK(c.balanced_accuracy() == doctest::Approx(0.85));
  CHECK(c.accuracy() == doctest::Approx(25.0 / 30.0));
  ConfusionCounts d;
  d.add(true, true);
  d.add(false, false);
  d.add(true, false);
  d.add(false, true);
  CHECK((d == ConfusionCounts{1, 1, 1, 1}));
}

TEST_CASE("timing statistics") {
  const auto s = timing_stats({10, 20, 30});
  CHECK(s.mean_batch_ms == doctest::Approx(20.0));
  CHECK(s.mean_frame_ms == s.mean_batch_ms / 60.0);
  CHECK(s.max_batch_ms == 30.0);
  CHECK(timing_stats({60}).mean_frame_ms == doctest::Approx(1.0));
  CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
  CHECK(percentile({0, 10}, 95) == doctest::Approx(9.5));
  CHECK(s.p99_batch_ms == doctest::Approx(29.8));
}

TEST_CASE("evaluate on a perfectly separated kit") {
  std::mt19937_64 rng(6);
  KitResults kit;
  for (int s = 0; s < 4; ++s) {
    const std::string id = "s" + std::to_string(s);
    const bool defective = s % 2 == 1;
    kit.truth[id] = defective;
    for (int run = 0; run < 10; ++run) {
      auto a = random_acquisition(id, run, rng, 0.01);
      if (defective) {
        a.patches[7].score = 0.5;
        a.patches[7].defective = true;
      }
      kit.acquisitions.push_back(a);
    }
  }
  const RegionThresholds t{{0.02, 0.02, 0.02, 0.02}};
  for (Level level : {Level::kPatch, Level::kStrip, Level::kRun}) {
    const auto r = evaluate(kit, t, level);
    CHECK(r.counts.accuracy() == 1.0);
    CHECK(r.counts.balanced_accuracy() == 1.0);
    const auto j = r.to_json();
    CHECK(j["positive_class"] == "defective");
  }
  CHECK((evaluate(kit, t, Level::kStrip).counts == ConfusionCounts{20, 0, 20, 0}));
  CHECK((evaluate(kit, t, Level::kRun).counts == ConfusionCounts{2, 0, 2, 0}));
  CHECK(evaluate(kit, t, Level::kPatch).counts.tp == 20);
  CHECK_THROWS_AS(evaluate(KitResults{}, t, Level::kStrip), Error);
  CHECK(parse_level("run") == Level::kRun);
  CHECK_THROWS_AS(parse_level("vial"), Error);
}

TEST_CASE("strip-level recalibration never lowers balanced accuracy") {
  std::mt19937_64 rng(7);
  KitResults kit;
  for (int s = 0; s < 6; ++s) {
    const std::string id = "c" + std::to_string(s);
    const bool defective = s >= 3;
    kit.truth[id] = defective;
    for (int run = 0; run < 10; ++run) {
      auto a = random_acquisition(id, run, rng, 0.03);
      if (defective) {
        auto& p = a.patches[static_cast<std::size_t>(run * 3 + s)];
        p.score += 0.02;
        p.defective = true;
      }
      kit.acquisitions.push_back(a);
    }
  }
  const auto patch = recalibrate(kit, Level::kPatch);
  const auto strip = recalibrate(kit, Level::kStrip, patch);
  CHECK(evaluate(kit, strip, Level::kStrip).counts.balanced_accuracy() >=
        evaluate(kit, patch, Level::kStrip).counts.balanced_accuracy());
}
