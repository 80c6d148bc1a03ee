#pragma once

// Seeded synthetic pedestrian images: upright textured figures (head, torso,
// legs) with aspect ~0.41 on smooth noise with rectangular clutter. Optional
// occluders hide the lower part of a figure; visibility is the fraction of
// the figure's box still showing, measured on an id mask.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/dataset.hpp"
#include "gmlf/nn/params.hpp"

namespace gmlf {

struct SynthSpec {
  int width = 512;
  int height = 256;
  int min_objects = 2;
  int max_objects = 6;
  double min_height = 20;
  double max_height = 200;
  double aspect = 0.41;
  double occluder_probability = 0.3;
  int clutter = 6;
  double max_overlap = 0.3;  // IoU allowed between figures

  void validate() const {
    if (width < 8 || height < 8) throw std::invalid_argument("synth: image must be at least 8x8");
    if (min_objects < 0 || max_objects < min_objects) throw std::invalid_argument("synth: bad object count range");
    if (!(min_height > 0) || max_height < min_height) throw std::invalid_argument("synth: bad height range");
    if (max_height > height || max_height * aspect > width) {
      throw std::invalid_argument("synth: pedestrians up to " + std::to_string(max_height) +
                                  " px do not fit in a " + std::to_string(width) + "x" + std::to_string(height) +
                                  " image");
    }
    if (occluder_probability < 0 || occluder_probability > 1) {
      throw std::invalid_argument("synth: occluder probability must lie in [0, 1]");
    }
  }
};

namespace detail {

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

/// Bilinear value noise on a coarse lattice.
inline std::vector<double> value_noise(int w, int h, int cell, double amplitude, Rng& rng) {
  const int gw = w / cell + 2, gh = h / cell + 2;
  std::uniform_real_distribution<double> u(-amplitude, amplitude);
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
  for (auto& v : lattice) v = u(rng);
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    const double fy = static_cast<double>(y) / cell;
    const int iy = static_cast<int>(fy);
    const double ty = fy - iy;
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const int ix = static_cast<int>(fx);
      const double tx = fx - ix;
      auto L = [&](int a, int b) { return lattice[static_cast<std::size_t>(b) * gw + a]; };
      const double top = L(ix, iy) * (1 - tx) + L(ix + 1, iy) * tx;
      const double bot = L(ix, iy + 1) * (1 - tx) + L(ix + 1, iy + 1) * tx;
      out[static_cast<std::size_t>(y) * w + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

struct Canvas {
  int w, h;
  std::vector<double> px;
  std::vector<int> id;  // -1 background, -2 occluder, else figure index

  void fill_rect(int x1, int y1, int x2, int y2, double v, int owner) {
    for (int y = std::max(0, y1); y < std::min(h, y2); ++y) {
      for (int x = std::max(0, x1); x < std::min(w, x2); ++x) {
        px[static_cast<std::size_t>(y) * w + x] = v;
        if (owner != -1) id[static_cast<std::size_t>(y) * w + x] = owner;
      }
    }
  }
};

inline void draw_figure(Canvas& c, const RoiBox& b, double tone, double stripe, Rng& rng) {
  const double w = b.width(), h = b.height();
  const int x1 = static_cast<int>(b.x1), y1 = static_cast<int>(b.y1);
  const int x2 = static_cast<int>(b.x2), y2 = static_cast<int>(b.y2);
  std::uniform_real_distribution<double> jit(-6, 6);
  const double head_tone = tone + jit(rng);
  const double leg_tone = tone + jit(rng);
  const int head_h = std::max(1, static_cast<int>(0.18 * h));
  const int torso_end = y1 + std::max(head_h + 1, static_cast<int>(0.58 * h));
  const int period = std::max(2, static_cast<int>(h / 12));
  // The whole box belongs to the figure on the id mask, drawn or not.
  for (int y = std::max(0, y1); y < std::min(c.h, y2); ++y) {
    for (int x = std::max(0, x1); x < std::min(c.w, x2); ++x) {
      const double rx = (x + 0.5 - b.x1) / w;  // 0..1 across
      const double ry = (y + 0.5 - b.y1) / h;  // 0..1 down
      double v = -1;
      if (y < y1 + head_h) {
        const double dx = (rx - 0.5) / 0.26, dy = (ry - 0.09) / 0.09;
        if (dx * dx + dy * dy <= 1.0) v = head_tone;
      } else if (y < torso_end) {
        if (rx >= 0.06 && rx <= 0.94) v = tone + ((y / period) % 2 ? stripe : -stripe);
      } else {
        if ((rx >= 0.12 && rx <= 0.44) || (rx >= 0.56 && rx <= 0.88)) v = leg_tone;
      }
      const std::size_t i = static_cast<std::size_t>(y) * c.w + x;
      if (v >= 0) c.px[i] = v;
      c.id[i] = -3;  // placeholder, replaced by the caller
    }
  }
}

}  // namespace detail

/// One image with its annotations.
inline Sample synth_image(const SynthSpec& spec, std::uint64_t seed, const std::string& path = "") {
  spec.validate();
  Rng rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int W = spec.width, H = spec.height;
  detail::Canvas c{W, H, std::vector<double>(static_cast<std::size_t>(W) * H),
                   std::vector<int>(static_cast<std::size_t>(W) * H, -1)};

  const double base = 70 + 110 * u01(rng);
  const auto coarse = detail::value_noise(W, H, 32, 40, rng);
  const auto fine = detail::value_noise(W, H, 4, 10, rng);
  for (std::size_t i = 0; i < c.px.size(); ++i) c.px[i] = base + coarse[i] + fine[i];

  // Clutter: flat rectangles that are mostly wider than tall.
  for (int k = 0; k < spec.clutter; ++k) {
    const double ch = 10 + u01(rng) * 0.4 * H;
    const double cw = ch * (0.8 + 2.5 * u01(rng));
    const double cx = u01(rng) * W, cy = u01(rng) * H;
    c.fill_rect(static_cast<int>(cx - cw / 2), static_cast<int>(cy - ch / 2), static_cast<int>(cx + cw / 2),
                static_cast<int>(cy + ch / 2), base + (u01(rng) < 0.5 ? -1 : 1) * (25 + 50 * u01(rng)), -1);
  }

  // Figure placement with bounded mutual overlap.
  std::uniform_int_distribution<int> count_dist(spec.min_objects, spec.max_objects);
  const int n = count_dist(rng);
  const double log_lo = std::log(spec.min_height), log_hi = std::log(spec.max_height);
  std::vector<RoiBox> boxes;
  for (int k = 0; k < n; ++k) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double hh = std::round(std::exp(log_lo + (log_hi - log_lo) * u01(rng)));
      const double ww = std::max(1.0, std::round(spec.aspect * hh));
      const double x = std::floor(u01(rng) * (W - ww + 1));
      const double y = std::floor(u01(rng) * (H - hh + 1));
      const RoiBox b{x, y, x + ww, y + hh};
      bool ok = true;
      for (const auto& o : boxes) ok = ok && iou(o, b) <= spec.max_overlap;
      if (ok) {
        boxes.push_back(b);
        break;
      }
    }
  }
  // Far (higher on screen) figures first so nearer ones occlude them.
  std::stable_sort(boxes.begin(), boxes.end(), [](const RoiBox& a, const RoiBox& b) { return a.y2 < b.y2; });
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const double sign = u01(rng) < 0.5 ? -1.0 : 1.0;
    const double tone = std::clamp(base + sign * (45 + 45 * u01(rng)), 5.0, 250.0);
    detail::draw_figure(c, boxes[k], tone, 6 + 8 * u01(rng), rng);
    for (auto& v : c.id) {
      if (v == -3) v = static_cast<int>(k);
    }
    if (u01(rng) < spec.occluder_probability) {
      // Covers the bottom 35-80% of the figure and spills sideways.
      const double frac = 0.35 + 0.45 * u01(rng);
      const RoiBox& b = boxes[k];
      const double spill = b.width() * (0.2 + 0.6 * u01(rng));
      const double oy1 = b.y2 - frac * b.height();
      const double otone = std::clamp(base + (u01(rng) < 0.5 ? -1 : 1) * (30 + 40 * u01(rng)), 5.0, 250.0);
      c.fill_rect(static_cast<int>(std::floor(b.x1 - spill)), static_cast<int>(std::floor(oy1)),
                  static_cast<int>(std::ceil(b.x2 + spill)), static_cast<int>(std::ceil(b.y2)) + 2, otone, -2);
    }
  }

  Sample s;
  s.path = path;
  s.image = Image(W, H, 1);
  std::normal_distribution<double> grain(0.0, 3.0);
  for (std::size_t i = 0; i < c.px.size(); ++i) s.image.pixels[i] = detail::to_byte(c.px[i] + grain(rng));
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    const RoiBox& b = boxes[k];
    std::size_t own = 0, total = 0;
    for (int y = static_cast<int>(b.y1); y < static_cast<int>(b.y2); ++y) {
      for (int x = static_cast<int>(b.x1); x < static_cast<int>(b.x2); ++x) {
        ++total;
        own += c.id[static_cast<std::size_t>(y) * W + x] == static_cast<int>(k);
      }
    }
    s.boxes.push_back({b, b.height(), total ? static_cast<double>(own) / static_cast<double>(total) : 0.0, false});
  }
  return s;
}

/// `count` images; image i is seeded by (seed, i) alone.
inline Dataset synth_dataset(const SynthSpec& spec, int count, std::uint64_t seed, const std::string& prefix = "img") {
  if (count < 0) throw std::invalid_argument("synth: negative image count");
  Dataset d;
  d.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%05d.pgm", prefix.c_str(), i);
    std::uint64_t z = seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(i) + 1;
    z = (z ^ (z >> 31)) * 0xBF58476D1CE4E5B9ULL;
    d.push_back(synth_image(spec, z ^ (z >> 29), name));
  }
  return d;
}

}  // namespace gmlf
