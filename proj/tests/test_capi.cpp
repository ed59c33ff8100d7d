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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstring>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "vialscan.h"

TEST_CASE("status names and version") {
  CHECK(std::string(vs_status_name(VS_OK)) == "ok");
  CHECK(std::string(vs_status_name(VS_ERR_BUDGET)) == "budget");
  CHECK(std::string(vs_version()) == "0.1.0");
}

TEST_CASE("thresholds handle and classification") {
  const double values[4] = {0.015589, 0.02, 0.046568, 0.029593};
  vs_thresholds* t = nullptr;
  REQUIRE(vs_thresholds_create(values, &t) == VS_OK);
  double got = 0;
  CHECK(vs_thresholds_get(t, 2, &got) == VS_OK);
  CHECK(got == 0.046568);
  int reject = -1;
  CHECK(vs_classify(t, 0.02, 0, &reject) == VS_OK);
  CHECK(reject == 1);
  CHECK(vs_classify(t, 0.015589, 0, &reject) == VS_OK);
  CHECK(reject == 0);
  CHECK(vs_classify(t, 0.5, 7, &reject) == VS_ERR_CONFIG);
  CHECK(std::strlen(vs_last_error()) > 0);
  CHECK(vs_classify(t, 0.5, 0, nullptr) == VS_ERR_ARGUMENT);
  vs_thresholds_free(t);

  const double bad[4] = {0.1, -1.0, 0.1, 0.1};
  CHECK(vs_thresholds_create(bad, &t) == VS_ERR_CONFIG);
  CHECK(vs_thresholds_load("/nonexistent/thresholds.json", &t) != VS_OK);
}

TEST_CASE("model handle scores patches") {
  const nlohmann::json toy = {{"image_size", 32},
                              {"stage_channels", {4, 4, 8, 8}},
                              {"branch_divisor", 1},
                              {"latent_dim", 8},
                              {"disc_channels", {4, 4, 8, 8}},
                              {"norm_groups", 2}};
  vs_model* m = nullptr;
  REQUIRE(vs_model_create(toy.dump().c_str(), 3, &m) == VS_OK);
  CHECK(vs_model_image_size(m) == 32);
  std::vector<float> px(2 * 32 * 32);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>((i * 37) % 101) / 100.0f;
  double scores[2] = {-1, -1};
  CHECK(vs_model_score(m, px.data(), 2, scores) == VS_OK);
  CHECK(scores[0] >= 0.0);
  CHECK(scores[1] >= 0.0);
  std::vector<float> rec(32 * 32);
  CHECK(vs_model_reconstruct(m, px.data(), rec.data()) == VS_OK);
  px[5] = 2.0f;
  CHECK(vs_model_score(m, px.data(), 1, scores) == VS_ERR_RANGE);
  vs_model_free(m);

  CHECK(vs_model_create("{not json", 0, &m) == VS_ERR_CONFIG);
  CHECK(vs_model_load("/nonexistent.ckpt", &m) == VS_ERR_MODEL);
}

TEST_CASE("bench reports the per-frame mean and enforces the budget") {
  vs_options o;
  vs_options_init(&o);
  o.batches = 3;
  o.quiet = 1;
  char* summary = nullptr;
  REQUIRE(vs_bench(&o, &summary) == VS_OK);
  const auto j = nlohmann::json::parse(summary);
  vs_free_string(summary);
  const auto& inf = j["inference"];
  CHECK(inf["mean_frame_ms"].get<double>() == inf["mean_batch_ms"].get<double>() / 60.0);
  CHECK(j["within_budget"] == true);

  o.budget_ms = 1e-6;
  summary = nullptr;
  CHECK(vs_bench(&o, &summary) == VS_ERR_BUDGET);
  CHECK(summary != nullptr);
  vs_free_string(summary);
}

TEST_CASE("workflows reject missing arguments") {
  vs_options o;
  vs_options_init(&o);
  char* summary = nullptr;
  CHECK(vs_train(&o, &summary) == VS_ERR_ARGUMENT);
  CHECK(vs_evaluate(&o, &summary) == VS_ERR_ARGUMENT);
  CHECK(vs_train(nullptr, &summary) == VS_ERR_ARGUMENT);
}
