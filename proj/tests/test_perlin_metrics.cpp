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

#include <cmath>
#include <random>

#include "testing.hpp"
#include "oracles.hpp"
#include "vialscan/error.hpp"
#include "vialscan/metrics.hpp"
#include "vialscan/perlin.hpp"
#include "vialscan/training.hpp"

using namespace vialscan;

TEST_CASE("perlin fields are deterministic and span [0,1]") {
  const NoiseShape shape{4, 3, 0.5};
  const Image a = perlin_field(48, 32, shape, 11);
  const Image b = perlin_field(48, 32, shape, 11);
  const Image c = perlin_field(48, 32, shape, 12);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  CHECK(a.min() == doctest::Approx(0.0));
  CHECK(a.max() == doctest::Approx(1.0));
}

TEST_CASE("binarized mask is strictly binary") {
  const Image field = perlin_field(32, 32, NoiseShape{2, 2, 0.5}, 5);
  const Image m = binarize_mask(field, 0.5);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const float v = m.pixels()[i];
    CHECK((v == 0.0f || v == 1.0f));
    CHECK((v == 1.0f) == (field.pixels()[i] > 0.5f));
  }
}

TEST_CASE("perturbation composes the blend pixelwise") {
  std::mt19937_64 rng(9);
  const Image x = oracle::random_image(32, 32, rng);
  const Image field = perlin_field(32, 32, NoiseShape{4, 2, 0.5}, 3);
  const double beta = 0.7;
  const auto p = compose_perturbation(x, field, 0.5, beta);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double m = p.mask.pixels()[i];
    const double n = p.noise.pixels()[i];
    const double xv = x.pixels()[i];
    CHECK(n == doctest::Approx(m * field.pixels()[i]));
    CHECK(p.x_star.pixels()[i] == doctest::Approx((1 - m) * xv + (1 - beta) * m * xv + beta * n).epsilon(1e-6));
    if (m == 0.0) CHECK(p.x_star.pixels()[i] == x.pixels()[i]);
  }
}

TEST_CASE("q = 0 never perturbs, q = 1 always does") {
  std::mt19937_64 rng(10);
  const Image x = oracle::random_image(16, 16, rng);
  PerlinParams never;
  never.q = 0.0;
  PerlinParams always;
  always.q = 1.0;
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = perturb(x, never, s);
    CHECK_FALSE(a.applied);
    CHECK(a.x_star == x);
    CHECK(a.mask.max() == 0.0f);
    const auto b = perturb(x, always, s);
    CHECK(b.applied);
    CHECK(b.beta >= 0.5);
    CHECK(b.beta <= 1.0);
  }
}

TEST_CASE("perlin params validate") {
  PerlinParams p;
  p.q = 1.5;
  CHECK_THROWS_AS(p.validate(), Error);
  p = PerlinParams{};
  p.min_octaves = 5;
  CHECK_THROWS_AS(p.validate(), Error);
}

TEST_CASE("ssim matches the naive windowed oracle") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 5; ++i) {
    const Image x = oracle::random_image(32, 24, rng);
    const Image y = oracle::random_image(32, 24, rng);
    CHECK(ssim(x, y) == doctest::Approx(oracle::naive_ssim(x, y)).epsilon(1e-9));
  }
}

TEST_CASE("ssim on images smaller than the window uses the largest odd window") {
  std::mt19937_64 rng(12);
  const Image x = oracle::random_image(8, 8, rng);
  const Image y = oracle::random_image(8, 8, rng);
  CHECK(SsimParams{}.effective_window(8, 8) == 7);
  CHECK(ssim(x, y) == doctest::Approx(oracle::naive_ssim(x, y)).epsilon(1e-9));
}

TEST_CASE("ssim basic properties") {
  std::mt19937_64 rng(13);
  const Image x = oracle::random_image(24, 24, rng);
  const Image y = oracle::random_image(24, 24, rng);
  CHECK(ssim(x, x) == doctest::Approx(1.0));
  CHECK(ssim_loss(x, x) == doctest::Approx(0.0));
  CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)));
  CHECK(ssim(x, y) < 1.0);
  CHECK_THROWS_AS(ssim(x, Image(23, 24)), Error);
}

TEST_CASE("contrast-structure term ignores a brightness offset") {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<float> u(0.0f, 0.5f);
  std::vector<float> a(24 * 24), b(24 * 24);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = u(rng);
    b[i] = a[i] + 0.3f;
  }
  const Image x(24, 24, a);
  const Image y(24, 24, b);
  CHECK(ssim_contrast_structure(x, y) == doctest::Approx(1.0).epsilon(1e-5));
  CHECK(ssim(x, y) < 0.99);
}

TEST_CASE("tensor ssim agrees with the image form") {
  std::mt19937_64 rng(15);
  std::vector<Image> xs, ys;
  for (int i = 0; i < 3; ++i) {
    xs.push_back(oracle::random_image(32, 32, rng));
    ys.push_back(oracle::random_image(32, 32, rng));
  }
  const auto per = ssim_per_sample(to_tensor(xs, torch::kFloat64), to_tensor(ys, torch::kFloat64));
  for (int i = 0; i < 3; ++i) CHECK(per[i].item<double>() == doctest::Approx(ssim(xs[i], ys[i])).epsilon(1e-9));
}

TEST_CASE("huber, l1 and l2 by hand") {
  const Image x(4, 1, std::vector<float>{0.0f, 0.0f, 0.0f, 0.0f});
  const Image y(4, 1, std::vector<float>{0.5f, 1.0f, 0.25f, 0.0f});
  CHECK(l1(x, y) == doctest::Approx((0.5 + 1.0 + 0.25) / 4));
  CHECK(l2(x, y) == doctest::Approx((0.25 + 1.0 + 0.0625) / 4));
  CHECK(huber(x, y, 1.0) == doctest::Approx(0.5 * (0.25 + 1.0 + 0.0625) / 4));
  CHECK(huber(x, y, 0.5) == doctest::Approx((0.125 + 0.5 * (1.0 - 0.25) + 0.5 * 0.0625) / 4));
  const auto tx = to_tensor({x}, torch::kFloat64);
  const auto ty = to_tensor({y}, torch::kFloat64);
  CHECK(huber(tx, ty, 0.5).item<double>() == doctest::Approx(huber(x, y, 0.5)));
  CHECK(l1(tx, ty).item<double>() == doctest::Approx(l1(x, y)));
  CHECK(l2(tx, ty).item<double>() == doctest::Approx(l2(x, y)));
}

TEST_CASE("gaussian taps are normalized and symmetric") {
  const auto t = gaussian_taps(11, 1.5);
  double s = 0.0;
  for (double v : t) s += v;
  CHECK(s == doctest::Approx(1.0));
  for (int i = 0; i < 5; ++i) CHECK(t[static_cast<std::size_t>(i)] == doctest::Approx(t[static_cast<std::size_t>(10 - i)]));
}
