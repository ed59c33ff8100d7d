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

#include "vialscan/synthkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <functional>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "vialscan/error.hpp"

namespace vialscan {

namespace {

std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) { return mix(seed ^ mix(tag)); }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Antialiased coverage of "d < 0" for a signed distance in pixels.
double cover(double signed_distance) { return std::clamp(0.5 - signed_distance, 0.0, 1.0); }

struct Bubble {
  double x, y, r, dx;
};

struct Droplet {
  double x, y, rx, ry;
};

// Everything fixed for one strip.
struct StripGeometry {
  double cw, ch;
  double half_width;
  double neck_width;
  std::array<double, kVialsPerStrip> fill{};
  double curvature;
  std::array<std::array<double, 3>, 4> marks{};  // rows: y, x0, x1 (cell fractions)
  double gradient_sign;
};

StripGeometry strip_geometry(const StripSpec& spec) {
  std::mt19937_64 rng(derive(spec.seed, 1));
  StripGeometry g{};
  g.cw = static_cast<double>(spec.width) / kVialsPerStrip;
  g.ch = static_cast<double>(spec.height) / kRegionsPerVial;
  g.half_width = g.cw * uniform(rng, 0.33, 0.36);
  g.neck_width = g.cw * uniform(rng, 0.17, 0.20);
  const double base = uniform(rng, spec.fill_min, spec.fill_max);
  for (auto& f : g.fill) f = std::clamp(base + uniform(rng, -0.03, 0.03), 0.05, 0.9);
  g.curvature = uniform(rng, spec.curvature_min, spec.curvature_max);
  for (auto& m : g.marks) {
    m[0] = uniform(rng, 0.25, 0.75);
    m[1] = uniform(rng, -0.3, -0.05);
    m[2] = uniform(rng, 0.05, 0.3);
  }
  std::sort(g.marks.begin(), g.marks.end());
  g.gradient_sign = uniform(rng, 0.0, 1.0) < 0.5 ? 1.0 : -1.0;
  return g;
}

// Body half-width at absolute row y (bands 1..3); 0 outside the body.
double body_half_width(const StripGeometry& g, double y) {
  const double band = y / g.ch;
  if (band < 1.0) return 0.0;
  if (band < 2.0) {
    return g.neck_width + (g.half_width - g.neck_width) * smoothstep(1.15, 1.85, band);
  }
  const double bottom_start = 3.55;
  const double bottom_end = 3.92;
  if (band < bottom_start) return g.half_width;
  if (band >= bottom_end) return 0.0;
  const double t = (band - bottom_start) / (bottom_end - bottom_start);
  return g.half_width * std::sqrt(std::max(0.0, 1.0 - t * t));
}

double meniscus_y(const StripGeometry& g, int vial, double dx, double sway) {
  const double rel = dx / g.half_width;
  return g.ch * (2.0 + g.fill[static_cast<std::size_t>(vial)] + g.curvature * rel * rel) + sway * rel;
}

// Unlit intensity of one pixel.
double shade(const StripSpec& spec, const StripGeometry& g, int vial, double px, double py,
             double sway, const std::vector<Bubble>& bubbles, const std::vector<Droplet>& droplets) {
  (void)spec;
  constexpr double kBackground = 0.12;
  const double cx = (vial + 0.5) * g.cw;
  const double dx = px - cx;
  const double band = py / g.ch;

  if (band < 1.0) {
    const double local_y = band;
    const double tab_half = 0.42 * g.cw;
    const double inside = cover(std::fabs(dx) - tab_half) * cover(0.1 * g.ch - local_y * g.ch) *
                          cover(local_y * g.ch - 0.92 * g.ch);
    double v = 0.72 - 0.05 * (dx / tab_half) * (dx / tab_half);
    for (const auto& m : g.marks) {
      const double my = m[0] * g.ch;
      const double on_row = cover(std::fabs(local_y * g.ch - my) - 1.2);
      const double on_span = cover(m[1] * g.cw - dx) * cover(dx - m[2] * g.cw);
      v -= 0.14 * on_row * on_span;
    }
    // Stem joining the tab to the neck.
    const double stem = cover(std::fabs(dx) - g.neck_width * 0.6) * cover(0.9 * g.ch - local_y * g.ch);
    const double body = std::max(inside, stem);
    return kBackground + (v - kBackground) * body;
  }

  const double hw = body_half_width(g, py);
  if (hw <= 0.0) return kBackground;
  const double rel = std::clamp(dx / hw, -1.0, 1.0);
  const double inside = cover(std::fabs(dx) - hw);
  double v = 0.50 + 0.12 * (1.0 - rel * rel);
  const double wall = std::exp(-std::pow((std::fabs(dx) - (hw - 1.5)) / 1.3, 2.0));
  v -= 0.20 * wall;

  const double my = meniscus_y(g, vial, dx, sway);
  const double below = smoothstep(my - 0.8, my + 0.8, py);
  v += 0.05 * (1.0 - below) - 0.05 * below;
  if (band >= 2.0) {
    v -= 0.25 * std::exp(-std::pow((py - my) / 1.1, 2.0));
    for (const auto& b : bubbles) {
      const double d = std::hypot(px - b.x, py - b.y);
      if (d > b.r + 1.5) continue;
      const double core = cover(d - b.r);
      const double rim = std::exp(-std::pow((d - b.r) / 0.7, 2.0));
      v = v * (1.0 - core) + 0.82 * core;
      v -= 0.25 * rim;
    }
  } else {
    for (const auto& d : droplets) {
      const double e = std::hypot((px - d.x) / d.rx, (py - d.y) / d.ry);
      if (e > 2.0) continue;
      v += 0.22 * cover((e - 1.0) * std::min(d.rx, d.ry));
    }
  }
  return kBackground + (v - kBackground) * inside;
}

struct RunContent {
  double gain;
  std::vector<std::vector<Bubble>> bubbles;  // per vial
  std::vector<std::vector<Droplet>> droplets;
  double sway_amplitude;
  double sway_phase;
};

RunContent run_content(const StripSpec& spec, const StripGeometry& g, std::uint64_t run_seed) {
  std::mt19937_64 rng(derive(run_seed, 2));
  RunContent c;
  c.gain = 1.0 + uniform(rng, -spec.jitter, spec.jitter);
  c.sway_amplitude = uniform(rng, 0.0, spec.sway_max);
  c.sway_phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  c.bubbles.resize(kVialsPerStrip);
  c.droplets.resize(kVialsPerStrip);
  for (int v = 0; v < kVialsPerStrip; ++v) {
    const double cx = (v + 0.5) * g.cw;
    const int nb = spec.bubbles_max > 0 ? uniform_int(rng, spec.bubbles_min, spec.bubbles_max) : 0;
    for (int i = 0; i < nb; ++i) {
      Bubble b{};
      b.r = uniform(rng, spec.bubble_radius_min, spec.bubble_radius_max);
      b.x = cx + uniform(rng, -1.0, 1.0) * (g.half_width - b.r - 3.0);
      b.y = uniform(rng, 0.0, 1.0);  // phase along the travel span, resolved per frame
      b.dx = uniform(rng, -0.3, 0.3);
      c.bubbles[static_cast<std::size_t>(v)].push_back(b);
    }
    const int nd = spec.droplets_max > 0 ? uniform_int(rng, 0, spec.droplets_max) : 0;
    for (int i = 0; i < nd; ++i) {
      Droplet d{};
      d.ry = uniform(rng, 1.0, 2.2);
      d.rx = d.ry * uniform(rng, 0.6, 0.9);
      d.y = g.ch * uniform(rng, 1.2, 1.8);
      const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      d.x = cx + side * (body_half_width(g, d.y) - 3.0 - d.rx);
      c.droplets[static_cast<std::size_t>(v)].push_back(d);
    }
  }
  return c;
}

// Bubble positions at a frame: rise from the lower body toward the meniscus,
// wrapping around the travel span.
std::vector<Bubble> bubbles_at(const StripSpec& spec, const StripGeometry& g, int vial,
                               const std::vector<Bubble>& seeds, int frame) {
  std::vector<Bubble> out;
  for (const auto& b : seeds) {
    const double top = meniscus_y(g, vial, 0.0, 0.0) + g.curvature * g.ch + b.r + 2.5;
    const double bottom = g.ch * 3.45 - b.r;
    if (bottom <= top) continue;
    const double span = bottom - top;
    double travel = b.y * span + spec.bubble_speed * frame;
    travel = std::fmod(travel, span);
    Bubble at = b;
    at.y = bottom - travel;
    const double cx = (vial + 0.5) * g.cw;
    const double limit = g.half_width - b.r - 3.0;
    at.x = std::clamp(b.x + b.dx * frame, cx - limit, cx + limit);
    out.push_back(at);
  }
  return out;
}

// Center inside the cell with room for a feature of radius `extent`.
std::pair<double, double> place(const Rect& cell, double extent, double fx, double fy) {
  const double lo_x = cell.x + extent + 1.0;
  const double hi_x = cell.x + cell.width - extent - 2.0;
  const double lo_y = cell.y + extent + 1.0;
  const double hi_y = cell.y + cell.height - extent - 2.0;
  return {std::clamp(fx, lo_x, hi_x), std::clamp(fy, lo_y, hi_y)};
}

using Buffer = std::vector<double>;

void composite(Buffer& buf, int w, const Rect& cell, double alpha_scale, double color,
               const std::function<double(double, double)>& alpha) {
  for (int y = cell.y; y < cell.y + cell.height; ++y) {
    for (int x = cell.x; x < cell.x + cell.width; ++x) {
      const double a = alpha_scale * alpha(x + 0.5, y + 0.5);
      if (a <= 0.0) continue;
      auto& p = buf[static_cast<std::size_t>(y) * w + x];
      p = p * (1.0 - a) + color * a;
    }
  }
}

}  // namespace

// --- specs ----------------------------------------------------------------------

void StripSpec::validate() const {
  if (width <= 0 || height <= 0 || width % kVialsPerStrip != 0 || height % kRegionsPerVial != 0) {
    raise(ErrorCode::kConfig, "strip size must split into 5 x 4 equal cells");
  }
  if (width / kVialsPerStrip < 16 || height / kRegionsPerVial < 16) {
    raise(ErrorCode::kConfig, "strip cells must be at least 16 px");
  }
  if (frames < 1) raise(ErrorCode::kConfig, "frames must be >= 1");
  if (!(fill_min <= fill_max) || fill_min < 0.0 || fill_max > 0.9) {
    raise(ErrorCode::kConfig, "fill range must satisfy 0 <= min <= max <= 0.9");
  }
  if (!(curvature_min <= curvature_max)) raise(ErrorCode::kConfig, "curvature range is empty");
  if (bubbles_min < 0 || bubbles_min > bubbles_max) raise(ErrorCode::kConfig, "bad bubble count range");
  if (!(bubble_radius_min > 0.0 && bubble_radius_min <= bubble_radius_max)) {
    raise(ErrorCode::kConfig, "bad bubble radius range");
  }
  if (droplets_max < 0) raise(ErrorCode::kConfig, "droplets_max must be >= 0");
  if (!(sway_max >= 0.0)) raise(ErrorCode::kConfig, "sway_max must be >= 0");
  if (jitter < 0.0 || frame_jitter < 0.0 || noise_sigma < 0.0 || gradient < 0.0) {
    raise(ErrorCode::kConfig, "lighting parameters must be non-negative");
  }
}

nlohmann::json StripSpec::to_json() const {
  return {{"width", width},
          {"height", height},
          {"frames", frames},
          {"fill_min", fill_min},
          {"fill_max", fill_max},
          {"curvature_min", curvature_min},
          {"curvature_max", curvature_max},
          {"bubbles_min", bubbles_min},
          {"bubbles_max", bubbles_max},
          {"bubble_radius_min", bubble_radius_min},
          {"bubble_radius_max", bubble_radius_max},
          {"bubble_speed", bubble_speed},
          {"sway_max", sway_max},
          {"droplets_max", droplets_max},
          {"gradient", gradient},
          {"jitter", jitter},
          {"frame_jitter", frame_jitter},
          {"noise_sigma", noise_sigma},
          {"seed", seed}};
}

StripSpec StripSpec::from_json(const nlohmann::json& j) {
  StripSpec s;
  try {
    s.width = j.value("width", s.width);
    s.height = j.value("height", s.height);
    s.frames = j.value("frames", s.frames);
    s.fill_min = j.value("fill_min", s.fill_min);
    s.fill_max = j.value("fill_max", s.fill_max);
    s.curvature_min = j.value("curvature_min", s.curvature_min);
    s.curvature_max = j.value("curvature_max", s.curvature_max);
    s.bubbles_min = j.value("bubbles_min", s.bubbles_min);
    s.bubbles_max = j.value("bubbles_max", s.bubbles_max);
    s.bubble_radius_min = j.value("bubble_radius_min", s.bubble_radius_min);
    s.bubble_radius_max = j.value("bubble_radius_max", s.bubble_radius_max);
    s.bubble_speed = j.value("bubble_speed", s.bubble_speed);
    s.sway_max = j.value("sway_max", s.sway_max);
    s.droplets_max = j.value("droplets_max", s.droplets_max);
    s.gradient = j.value("gradient", s.gradient);
    s.jitter = j.value("jitter", s.jitter);
    s.frame_jitter = j.value("frame_jitter", s.frame_jitter);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, std::string("strip spec: ") + e.what());
  }
  s.validate();
  return s;
}

const char* defect_kind_name(DefectKind kind) {
  switch (kind) {
    case DefectKind::kStuckParticle: return "stuck_particle";
    case DefectKind::kBlackSpot: return "black_spot";
    case DefectKind::kDeformation: return "deformation";
    case DefectKind::kScratch: return "scratch";
    case DefectKind::kFoam: return "foam";
    case DefectKind::kBurn: return "burn";
  }
  return "?";
}

DefectKind parse_defect_kind(const std::string& name) {
  for (int k = 0; k < kDefectKinds; ++k) {
    const auto kind = static_cast<DefectKind>(k);
    if (name == defect_kind_name(kind)) return kind;
  }
  raise(ErrorCode::kConfig, "unknown defect kind '" + name + "'");
}

void DefectSpec::validate() const {
  const int k = static_cast<int>(kind);
  if (k < 0 || k >= kDefectKinds) raise(ErrorCode::kConfig, "unknown defect kind");
  if (vial < 0 || vial >= kVialsPerStrip || region < 0 || region >= kRegionsPerVial) {
    raise(ErrorCode::kGeometry, "defect cell out of range");
  }
  if (!(magnitude >= 0.0 && magnitude <= 1.0)) raise(ErrorCode::kRange, "defect magnitude outside [0,1]");
}

nlohmann::json DefectSpec::to_json() const {
  return {{"kind", defect_kind_name(kind)}, {"vial", vial},         {"region", region},
          {"magnitude", magnitude},         {"seed", seed}};
}

DefectSpec DefectSpec::from_json(const nlohmann::json& j) {
  DefectSpec d;
  try {
    d.kind = parse_defect_kind(j.at("kind").get<std::string>());
    d.vial = j.at("vial").get<int>();
    d.region = j.at("region").get<int>();
    d.magnitude = j.at("magnitude").get<double>();
    d.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, std::string("defect spec: ") + e.what());
  }
  d.validate();
  return d;
}

// --- rendering ------------------------------------------------------------------

FrameStack gen_nominal_strip(const StripSpec& spec, std::uint64_t run_seed) {
  spec.validate();
  const StripGeometry g = strip_geometry(spec);
  const RunContent content = run_content(spec, g, run_seed);
  const int w = spec.width;
  const int h = spec.height;
  const int cw = w / kVialsPerStrip;

  FrameStack stack;
  std::ostringstream id;
  id << std::hex << spec.seed << '-' << run_seed;
  stack.acquisition_id = id.str();
  for (int f = 0; f < spec.frames; ++f) {
    std::mt19937_64 rng(derive(run_seed, 100 + static_cast<std::uint64_t>(f)));
    const double frame_gain = 1.0 + uniform(rng, -spec.frame_jitter, spec.frame_jitter);
    const double sway = content.sway_amplitude *
                        std::sin(content.sway_phase + 2.0 * std::numbers::pi * f / std::max(1, spec.frames));
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    std::vector<float> px(static_cast<std::size_t>(w) * h);
    for (int v = 0; v < kVialsPerStrip; ++v) {
      const auto bubbles = bubbles_at(spec, g, v, content.bubbles[static_cast<std::size_t>(v)], f);
      const double droplet_slide = 0.08 * f;
      auto droplets = content.droplets[static_cast<std::size_t>(v)];
      for (auto& d : droplets) d.y += droplet_slide;
      for (int y = 0; y < h; ++y) {
        const double light = content.gain * frame_gain *
                             (1.0 - spec.gradient * (g.gradient_sign > 0 ? y : h - 1 - y) / h);
        for (int x = v * cw; x < (v + 1) * cw; ++x) {
          const double s = shade(spec, g, v, x + 0.5, y + 0.5, sway, bubbles, droplets);
          px[static_cast<std::size_t>(y) * w + x] = static_cast<float>(s * light);
        }
      }
    }
    if (spec.noise_sigma > 0.0) {
      for (auto& p : px) p = static_cast<float>(p + noise(rng));
    }
    stack.frames.push_back(Image::clamped(w, h, std::move(px)));
  }
  return stack;
}

FrameStack inject_defect(const FrameStack& stack, const DefectSpec& defect, const RegionLayout& layout) {
  defect.validate();
  stack.validate();
  if (defect.magnitude == 0.0) return stack;
  const Rect cell = layout.cell(defect.vial, defect.region);
  const int w = stack.frames.front().width();
  const int h = stack.frames.front().height();
  if (cell.x + cell.width > w || cell.y + cell.height > h) {
    raise(ErrorCode::kGeometry, "defect cell lies outside the frame");
  }
  std::mt19937_64 rng(derive(defect.seed, 3));
  const double s = cell.width / 64.0;
  const double m = defect.magnitude;
  const double cx = cell.x + cell.width / 2.0;
  // Defects sit on the product: the neck is the narrowest part at about
  // 0.17 of the cell width either side of the axis.
  const double fx = cx + uniform(rng, -0.12, 0.12) * cell.width;
  const double fy = cell.y + uniform(rng, 0.15, 0.85) * cell.height;

  FrameStack out = stack;
  std::vector<Buffer> bufs;
  for (const auto& f : stack.frames) bufs.emplace_back(f.pixels().begin(), f.pixels().end());

  switch (defect.kind) {
    case DefectKind::kStuckParticle: {
      const double r = s * uniform(rng, 1.6, 3.0);
      const auto [x0, y0] = place(cell, r + 1.0, fx, fy);
      for (auto& b : bufs) {
        composite(b, w, cell, m, 0.04, [&](double x, double y) { return cover(std::hypot(x - x0, y - y0) - r); });
      }
      break;
    }
    case DefectKind::kBlackSpot: {
      const double rx = s * uniform(rng, 3.0, 6.0);
      const double ry = rx * uniform(rng, 0.6, 1.0);
      const auto [x0, y0] = place(cell, std::max(rx, ry) * 1.6, fx, fy);
      for (auto& b : bufs) {
        composite(b, w, cell, m * 0.85, 0.08, [&](double x, double y) {
          const double e = std::hypot((x - x0) / rx, (y - y0) / ry);
          return e > 1.6 ? 0.0 : std::exp(-2.0 * e * e);
        });
      }
      break;
    }
    case DefectKind::kDeformation: {
      const double radius = s * uniform(rng, 5.0, 8.0);
      const double side = uniform(rng, 0.0, 1.0) < 0.5 ? -1.0 : 1.0;
      // Bulge the wall: the strongest horizontal edge on the chosen side of
      // the axis in the first frame.
      const Buffer& ref = bufs.front();
      const int row = std::clamp(static_cast<int>(fy), cell.y, cell.y + cell.height - 1);
      double wall = cx + side * 0.34 * cell.width;
      double best = 0.0;
      for (int k = 2; k < cell.width / 2 - 1; ++k) {
        const int x = static_cast<int>(cx) + static_cast<int>(side) * k;
        const double g = std::fabs(ref[static_cast<std::size_t>(row) * w + x + 1] -
                                   ref[static_cast<std::size_t>(row) * w + x - 1]);
        if (g > best) {
          best = g;
          wall = x + 0.5;
        }
      }
      const auto [x0, y0] = place(cell, radius, wall, fy);
      const double amp = m * s * 4.0;
      for (std::size_t fi = 0; fi < bufs.size(); ++fi) {
        const Buffer src = bufs[fi];
        auto& dst = bufs[fi];
        for (int y = cell.y; y < cell.y + cell.height; ++y) {
          for (int x = cell.x; x < cell.x + cell.width; ++x) {
            const double d = std::hypot(x + 0.5 - x0, y + 0.5 - y0) / radius;
            if (d >= 1.0) continue;
            const double bump = std::pow(std::cos(0.5 * std::numbers::pi * d), 2.0);
            const double sx = std::clamp(x - side * amp * bump, static_cast<double>(cell.x),
                                         cell.x + cell.width - 1.0);
            const int xi = static_cast<int>(std::floor(sx));
            const int xj = std::min(xi + 1, cell.x + cell.width - 1);
            const double t = sx - xi;
            const double v = src[static_cast<std::size_t>(y) * w + xi] * (1.0 - t) +
                             src[static_cast<std::size_t>(y) * w + xj] * t;
            dst[static_cast<std::size_t>(y) * w + x] = v * (1.0 - 0.25 * m * bump);
          }
        }
      }
      break;
    }
    case DefectKind::kScratch: {
      const double len = s * uniform(rng, 10.0, 20.0);
      const double angle = uniform(rng, 0.0, std::numbers::pi);
      const auto [x0, y0] = place(cell, len / 2.0 + 1.0, fx, fy);
      const double ux = std::cos(angle);
      const double uy = std::sin(angle);
      const double color = uniform(rng, 0.0, 1.0) < 0.5 ? 0.95 : 0.1;
      for (auto& b : bufs) {
        composite(b, w, cell, m, color, [&](double x, double y) {
          const double along = (x - x0) * ux + (y - y0) * uy;
          const double across = std::fabs(-(x - x0) * uy + (y - y0) * ux);
          if (std::fabs(along) > len / 2.0) return 0.0;
          return cover(across - 0.6 * s);
        });
      }
      break;
    }
    case DefectKind::kFoam: {
      const double spread = s * uniform(rng, 5.0, 8.0);
      const auto [x0, y0] = place(cell, spread + 2.5 * s, fx, fy);
      const int n = uniform_int(rng, 8, 14);
      std::vector<std::array<double, 3>> cells;
      for (int i = 0; i < n; ++i) {
        const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double rr = spread * std::sqrt(uniform(rng, 0.0, 1.0));
        cells.push_back({x0 + rr * std::cos(a), y0 + rr * std::sin(a), s * uniform(rng, 1.0, 2.0)});
      }
      for (auto& b : bufs) {
        composite(b, w, cell, m, 0.92, [&](double x, double y) {
          double a = 0.0;
          for (const auto& c : cells) a = std::max(a, cover(std::hypot(x - c[0], y - c[1]) - c[2]));
          return a;
        });
        composite(b, w, cell, m * 0.6, 0.2, [&](double x, double y) {
          double a = 0.0;
          for (const auto& c : cells) {
            a = std::max(a, std::exp(-std::pow((std::hypot(x - c[0], y - c[1]) - c[2] - 0.5) / 0.5, 2.0)));
          }
          return a;
        });
      }
      break;
    }
    case DefectKind::kBurn: {
      const double r = s * uniform(rng, 5.0, 8.0);
      const auto [x0, y0] = place(cell, r * 1.3, fx, fy);
      std::array<double, 5> lobes{};
      for (auto& l : lobes) l = uniform(rng, 0.7, 1.3);
      for (auto& b : bufs) {
        composite(b, w, cell, m * 0.7, 0.22, [&](double x, double y) {
          const double a = std::atan2(y - y0, x - x0);
          double k = 0.0;
          for (std::size_t i = 0; i < lobes.size(); ++i) k += lobes[i] * std::cos((i + 1) * a) / (i + 2.0);
          const double e = std::hypot(x - x0, y - y0) / (r * (1.0 + 0.25 * k));
          return e > 1.3 ? 0.0 : std::exp(-1.8 * e * e);
        });
      }
      break;
    }
  }
  for (std::size_t i = 0; i < bufs.size(); ++i) {
    std::vector<float> px(bufs[i].size());
    for (std::size_t k = 0; k < px.size(); ++k) px[k] = static_cast<float>(bufs[i][k]);
    out.frames[i] = Image::clamped(w, h, std::move(px));
  }
  return out;
}

std::vector<int> test_frame_indices(int frames) {
  if (frames < 1) raise(ErrorCode::kRange, "no frames");
  if (frames < 3) {
    std::vector<int> out;
    for (int f = 0; f < frames; ++f) out.push_back(f);
    return out;
  }
  return {0, std::min(7, frames - 1), frames - 1};
}

// --- kits -----------------------------------------------------------------------

void KitCounts::validate() const {
  for (int c : {train, cal_defective, cal_nominal, test_defective, test_nominal}) {
    if (c < 0) raise(ErrorCode::kConfig, "kit counts must be >= 0");
  }
  if (train_runs < 1 || eval_runs < 1) raise(ErrorCode::kConfig, "runs must be >= 1");
  if (!(magnitude_min >= 0.0 && magnitude_min <= magnitude_max && magnitude_max <= 1.0)) {
    raise(ErrorCode::kConfig, "magnitude range must lie in [0,1]");
  }
}

nlohmann::json KitCounts::to_json() const {
  return {{"train", train},
          {"train_runs", train_runs},
          {"cal_defective", cal_defective},
          {"cal_nominal", cal_nominal},
          {"test_defective", test_defective},
          {"test_nominal", test_nominal},
          {"eval_runs", eval_runs},
          {"magnitude_min", magnitude_min},
          {"magnitude_max", magnitude_max}};
}

KitCounts KitCounts::from_json(const nlohmann::json& j) {
  KitCounts c;
  try {
    c.train = j.value("train", c.train);
    c.train_runs = j.value("train_runs", c.train_runs);
    c.cal_defective = j.value("cal_defective", c.cal_defective);
    c.cal_nominal = j.value("cal_nominal", c.cal_nominal);
    c.test_defective = j.value("test_defective", c.test_defective);
    c.test_nominal = j.value("test_nominal", c.test_nominal);
    c.eval_runs = j.value("eval_runs", c.eval_runs);
    c.magnitude_min = j.value("magnitude_min", c.magnitude_min);
    c.magnitude_max = j.value("magnitude_max", c.magnitude_max);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kConfig, std::string("kit counts: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json StripRecord::to_json() const {
  nlohmann::json d = nlohmann::json::array();
  for (const auto& x : defects) d.push_back(x.to_json());
  return {{"id", id},       {"split", split},         {"defective", defective},
          {"strip_seed", strip_seed}, {"defects", d}, {"run_seeds", run_seeds}};
}

StripRecord StripRecord::from_json(const nlohmann::json& j) {
  StripRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.defective = j.at("defective").get<bool>();
    r.strip_seed = j.at("strip_seed").get<std::uint64_t>();
    for (const auto& d : j.at("defects")) r.defects.push_back(DefectSpec::from_json(d));
    r.run_seeds = j.at("run_seeds").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kData, std::string("strip record: ") + e.what());
  }
  if (r.defective == r.defects.empty()) raise(ErrorCode::kData, "strip " + r.id + ": label disagrees with defects");
  return r;
}

std::vector<const StripRecord*> KitManifest::split(const std::string& name) const {
  std::vector<const StripRecord*> out;
  for (const auto& s : strips) {
    if (s.split == name) out.push_back(&s);
  }
  return out;
}

nlohmann::json KitManifest::to_json() const {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& r : strips) s.push_back(r.to_json());
  return {{"format", 1},
          {"seed", seed},
          {"spec", spec.to_json()},
          {"counts", counts.to_json()},
          {"layout", spec.layout().to_json()},
          {"strips", s}};
}

KitManifest KitManifest::from_json(const nlohmann::json& j) {
  KitManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.spec = StripSpec::from_json(j.at("spec"));
    m.counts = KitCounts::from_json(j.at("counts"));
    for (const auto& s : j.at("strips")) m.strips.push_back(StripRecord::from_json(s));
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kData, std::string("manifest: ") + e.what());
  }
  return m;
}

KitManifest KitManifest::load(const std::filesystem::path& root) {
  const auto path = std::filesystem::is_directory(root) ? root / "manifest.json" : root;
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kData, "cannot open manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorCode::kData, path.string() + ": " + e.what());
  }
  return from_json(j);
}

void KitManifest::save(const std::filesystem::path& root) const {
  std::filesystem::create_directories(root);
  const auto path = root / "manifest.json";
  const auto tmp = root / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) raise(ErrorCode::kIo, "cannot write " + tmp.string());
    out << to_json().dump(1) << '\n';
  }
  std::filesystem::rename(tmp, path);
}

KitManifest plan_kit(const KitCounts& counts, const StripSpec& spec, std::uint64_t seed) {
  counts.validate();
  spec.validate();
  KitManifest m;
  m.spec = spec;
  m.counts = counts;
  m.seed = seed;
  std::mt19937_64 rng(derive(seed, 4));
  auto add = [&](const std::string& split, const std::string& prefix, int index, bool defective, int runs) {
    StripRecord r;
    std::ostringstream id;
    id << prefix << std::setw(4) << std::setfill('0') << index;
    r.id = id.str();
    r.split = split;
    r.defective = defective;
    r.strip_seed = rng();
    if (defective) {
      DefectSpec d;
      d.kind = static_cast<DefectKind>(uniform_int(rng, 0, kDefectKinds - 1));
      d.vial = uniform_int(rng, 0, kVialsPerStrip - 1);
      d.region = uniform_int(rng, 0, kRegionsPerVial - 1);
      d.magnitude = uniform(rng, counts.magnitude_min, counts.magnitude_max);
      d.seed = rng();
      r.defects.push_back(d);
    }
    for (int k = 0; k < runs; ++k) r.run_seeds.push_back(rng());
    m.strips.push_back(std::move(r));
  };
  for (int i = 0; i < counts.train; ++i) add("train", "tr", i, false, counts.train_runs);
  for (int i = 0; i < counts.cal_nominal; ++i) add("calibration", "cn", i, false, counts.eval_runs);
  for (int i = 0; i < counts.cal_defective; ++i) add("calibration", "cd", i, true, counts.eval_runs);
  for (int i = 0; i < counts.test_nominal; ++i) add("test", "tn", i, false, counts.eval_runs);
  for (int i = 0; i < counts.test_defective; ++i) add("test", "td", i, true, counts.eval_runs);
  return m;
}

FrameStack render_run(const KitManifest& manifest, const StripRecord& strip, int run) {
  if (run < 0 || run >= static_cast<int>(strip.run_seeds.size())) {
    raise(ErrorCode::kRange, "strip " + strip.id + " has no run " + std::to_string(run));
  }
  StripSpec spec = manifest.spec;
  spec.seed = strip.strip_seed;
  FrameStack stack = gen_nominal_strip(spec, strip.run_seeds[static_cast<std::size_t>(run)]);
  const RegionLayout layout = spec.layout();
  for (const auto& d : strip.defects) stack = inject_defect(stack, d, layout);
  return stack;
}

std::filesystem::path run_dir(const std::filesystem::path& root, const StripRecord& strip, int run) {
  return root / strip.split / strip.id / std::to_string(run);
}

std::string frame_file(int frame) {
  std::ostringstream s;
  s << "frame_" << std::setw(2) << std::setfill('0') << frame << ".png";
  return s.str();
}

void write_strip(const std::filesystem::path& root, const KitManifest& manifest, const StripRecord& strip) {
  for (int run = 0; run < static_cast<int>(strip.run_seeds.size()); ++run) {
    const FrameStack stack = render_run(manifest, strip, run);
    const auto dir = run_dir(root, strip, run);
    const auto tmp = std::filesystem::path(dir.string() + ".tmp");
    std::filesystem::remove_all(tmp);
    std::filesystem::create_directories(tmp);
    if (strip.split == "train") {
      for (int f = 0; f < static_cast<int>(stack.size()); ++f) {
        save_png(stack.frames[static_cast<std::size_t>(f)], tmp / frame_file(f), 16);
      }
      save_png(rank_filter(stack, 1), tmp / "rank_min.png", 16);
      save_png(rank_filter(stack, static_cast<int>(stack.size())), tmp / "rank_max.png", 16);
    } else {
      for (int f : test_frame_indices(static_cast<int>(stack.size()))) {
        save_png(stack.frames[static_cast<std::size_t>(f)], tmp / frame_file(f), 16);
      }
    }
    std::filesystem::remove_all(dir);
    std::filesystem::rename(tmp, dir);
  }
}

KitManifest build_kit(const std::filesystem::path& root, const KitCounts& counts, const StripSpec& spec,
                      std::uint64_t seed, int threads) {
  const KitManifest manifest = plan_kit(counts, spec, seed);
  std::filesystem::create_directories(root);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= manifest.strips.size()) return;
      try {
        write_strip(root, manifest, manifest.strips[i]);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = manifest.strips.size();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < std::max(1, threads); ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  manifest.save(root);
  return manifest;
}

}  // namespace vialscan
