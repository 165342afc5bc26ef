#pragma once

// Procedural road scenes: sky and ground, a trapezoidal drivable region,
// thin lane stripes inside it, and solid rectangles whose color encodes the
// class. Everything is drawn in 8-bit RGB so the PPM round trip is exact.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mtpn/config.hpp"
#include "mtpn/detection.hpp"
#include "mtpn/image.hpp"
#include "mtpn/mask.hpp"
#include "mtpn/network.hpp"

namespace mtpn {

enum class Difficulty { easy, medium };

inline std::string to_string(Difficulty d) { return d == Difficulty::easy ? "easy" : "medium"; }

inline Difficulty parse_difficulty(std::string_view s) {
  if (s == "easy") return Difficulty::easy;
  if (s == "medium") return Difficulty::medium;
  throw ConfigError("difficulty", "unknown difficulty '" + std::string(s) + "' (expected easy or medium)");
}

struct Sample {
  Tensor<float> image;  // (1, 3, h, w) in [0, 1]
  std::vector<GtBox> boxes;
  Mask drivable;
  Mask lane;
};

/// Class colors of the synthetic objects; distinct from road, sky and lanes.
inline std::array<std::uint8_t, 3> synth_class_color(int class_id) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 10> palette{{{220, 30, 30},
                                                                          {30, 60, 220},
                                                                          {240, 140, 20},
                                                                          {150, 40, 190},
                                                                          {20, 170, 60},
                                                                          {20, 200, 200},
                                                                          {200, 200, 40},
                                                                          {120, 70, 30},
                                                                          {250, 110, 180},
                                                                          {10, 10, 10}}};
  return palette[static_cast<std::size_t>(class_id) % palette.size()];
}

namespace detail {
class SceneRng {
 public:
  explicit SceneRng(std::uint64_t seed) : rng_(splitmix64(seed ^ 0x5ce9e5ULL)) {}
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng_); }
  int integer(int lo, int hi) {  // inclusive
    return lo + static_cast<int>(unit_uniform(rng_) * (hi - lo + 1));
  }

 private:
  std::mt19937_64 rng_;
};

inline std::uint8_t clamp_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }
}  // namespace detail

inline Sample synth_sample(std::uint64_t seed, int h, int w, Difficulty difficulty = Difficulty::easy,
                           int num_classes = 10) {
  ModelConfig::check_resolution(h, w);
  if (num_classes < 1) throw ConfigError("num_classes", "must be positive");
  detail::SceneRng rng(seed);
  Image img(h, w);
  Sample s;
  s.drivable = Mask(h, w);
  s.lane = Mask(h, w);

  const double horizon = h * rng.uniform(0.35, 0.5);
  const std::array<double, 3> sky{rng.uniform(110, 160), rng.uniform(150, 190), rng.uniform(200, 240)};
  const std::array<double, 3> ground{rng.uniform(70, 100), rng.uniform(110, 140), rng.uniform(50, 80)};
  const double road = rng.uniform(70, 110);

  // Trapezoid: narrow top edge at the horizon, wide bottom edge at the last row.
  const double top_c = w * rng.uniform(0.4, 0.6);
  const double top_half = w * rng.uniform(0.03, 0.08);
  const double bot_l = w * rng.uniform(0.0, 0.25);
  const double bot_r = w * rng.uniform(0.75, 1.0);
  auto edges = [&](double y) {
    const double t = (y - horizon) / (h - 1 - horizon);
    return std::pair{(top_c - top_half) + t * (bot_l - (top_c - top_half)),
                     (top_c + top_half) + t * (bot_r - (top_c + top_half))};
  };

  const int lanes = rng.integer(1, 3);
  std::vector<double> lane_pos;
  for (int k = 0; k < lanes; ++k) lane_pos.push_back((k + 1.0) / (lanes + 1.0) + rng.uniform(-0.05, 0.05));
  const double lane_half = difficulty == Difficulty::easy ? 1.5 : 1.0;
  const std::array<double, 3> lane_color{rng.uniform(225, 255), rng.uniform(225, 255), rng.uniform(170, 255)};

  for (int i = 0; i < h; ++i) {
    const double y = i + 0.5;
    for (int j = 0; j < w; ++j) {
      const double x = j + 0.5;
      std::array<double, 3> c = y < horizon ? sky : ground;
      if (y >= horizon) {
        const auto [l, r] = edges(y);
        if (x >= l && x < r) {
          c = {road, road, road + 5};
          s.drivable.at(i, j) = 1;
          for (double f : lane_pos) {
            const double lx = l + f * (r - l);
            const double half = lane_half * (0.5 + (y - horizon) / (h - horizon));
            if (std::abs(x - lx) <= std::max(0.5, half)) {
              c = lane_color;
              s.lane.at(i, j) = 1;
            }
          }
        }
      }
      std::uint8_t* p = img.px(i, j);
      for (int ch = 0; ch < 3; ++ch) p[ch] = detail::clamp_byte(c[std::size_t(ch)]);
    }
  }

  // Objects occlude the road, so their pixels leave both masks.
  const int max_boxes = difficulty == Difficulty::easy ? 3 : 5;
  const int count = rng.integer(1, max_boxes);
  const double min_side = difficulty == Difficulty::easy ? 0.15 : 0.08;
  const double max_side = difficulty == Difficulty::easy ? 0.4 : 0.35;
  for (int b = 0, tries = 0; b < count && tries < 200; ++tries) {
    const int bw = std::max(4, static_cast<int>(std::lround(w * rng.uniform(min_side, max_side))));
    const int bh = std::max(4, static_cast<int>(std::lround(h * rng.uniform(min_side, max_side) * 1.2)));
    if (bw >= w || bh >= h) continue;
    const int x0 = rng.integer(0, w - bw);
    const int y0 = rng.integer(0, h - bh);
    const int cls = rng.integer(0, num_classes - 1);
    const Box box{x0 + 0.5 * bw, y0 + 0.5 * bh, double(bw), double(bh)};
    bool clash = false;
    for (const GtBox& o : s.boxes) clash = clash || iou(o.box, box) > 0.1 || std::abs(o.box.cx - box.cx) < 8;
    if (clash) continue;
    const auto color = synth_class_color(cls);
    for (int i = y0; i < y0 + bh; ++i) {
      for (int j = x0; j < x0 + bw; ++j) {
        std::copy(color.begin(), color.end(), img.px(i, j));
        s.drivable.at(i, j) = 0;
        s.lane.at(i, j) = 0;
      }
    }
    s.boxes.push_back({cls, box});
    ++b;
  }

  if (difficulty == Difficulty::medium) {
    for (auto& v : img.rgb) v = detail::clamp_byte(v + rng.uniform(-12, 12));
  }
  s.image = image_to_tensor(img);
  return s;
}

/// Stacks samples into one (n, 3, h, w) tensor.
inline Tensor<float> stack_images(std::span<const Sample* const> samples) {
  const Shape s0 = samples.front()->image.shape();
  Tensor<float> out(Shape{static_cast<std::int64_t>(samples.size()), 3, s0.h, s0.w});
  for (std::size_t k = 0; k < samples.size(); ++k) {
    if (!(samples[k]->image.shape() == s0)) throw ShapeError("stack_images", "h/w", "samples differ in resolution");
    std::copy(samples[k]->image.data().begin(), samples[k]->image.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(k * static_cast<std::size_t>(s0.numel())));
  }
  return out;
}

// ---------------------------------------------------------------------------
// On-disk dataset: one PPM and two PGM masks per sample plus dataset.json.

inline void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& dir, const json& meta = {}) {
  std::filesystem::create_directories(dir);
  json index = json::array();
  for (std::size_t k = 0; k < samples.size(); ++k) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "sample_%05zu", k);
    const Sample& s = samples[k];
    write_ppm(tensor_to_image(s.image), dir / (std::string(stem) + ".ppm"));
    write_mask_pgm(s.drivable, dir / (std::string(stem) + "_drivable.pgm"));
    write_mask_pgm(s.lane, dir / (std::string(stem) + "_lane.pgm"));
    json boxes = json::array();
    for (const GtBox& b : s.boxes) boxes.push_back({b.class_id, b.box.cx, b.box.cy, b.box.w, b.box.h});
    index.push_back({{"image", std::string(stem) + ".ppm"},
                     {"drivable", std::string(stem) + "_drivable.pgm"},
                     {"lane", std::string(stem) + "_lane.pgm"},
                     {"boxes", boxes}});
  }
  json doc{{"samples", index}};
  if (!meta.is_null()) doc["meta"] = meta;
  atomic_write(dir / "dataset.json", doc.dump(2));
}

inline std::vector<Sample> load_dataset(const std::filesystem::path& dir) {
  const auto raw = read_file(dir / "dataset.json");
  json doc;
  try {
    doc = json::parse(raw.begin(), raw.end());
  } catch (const json::exception& e) {
    throw IoError((dir / "dataset.json").string() + ": " + e.what());
  }
  std::vector<Sample> out;
  try {
    for (const json& e : doc.at("samples")) {
      Sample s;
      s.image = image_to_tensor(read_ppm(dir / e.at("image").get<std::string>()));
      s.drivable = read_mask_pgm(dir / e.at("drivable").get<std::string>());
      s.lane = read_mask_pgm(dir / e.at("lane").get<std::string>());
      for (const json& b : e.at("boxes"))
        s.boxes.push_back({b.at(0).get<int>(), {b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>(),
                                                b.at(4).get<double>()}});
      out.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw IoError((dir / "dataset.json").string() + ": " + e.what());
  }
  if (out.empty()) throw IoError((dir / "dataset.json").string() + ": dataset has no samples");
  return out;
}

}  // namespace mtpn
