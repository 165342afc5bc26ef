#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mtpn/detection.hpp"
#include "mtpn/io.hpp"
#include "mtpn/mask.hpp"

namespace mtpn {

/// 8-bit interleaved RGB raster.
struct Image {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::int64_t height, std::int64_t width) : h(height), w(width), rgb(static_cast<std::size_t>(3 * height * width), 0) {}

  std::uint8_t* px(std::int64_t i, std::int64_t j) { return rgb.data() + 3 * (i * w + j); }
  const std::uint8_t* px(std::int64_t i, std::int64_t j) const { return rgb.data() + 3 * (i * w + j); }

  friend bool operator==(const Image&, const Image&) = default;
};

namespace detail {
/// Parses "P5"/"P6" headers: magic, width, height, maxval, with # comments.
inline std::size_t parse_netpbm_header(std::span<const std::uint8_t> b, const char* magic, std::int64_t& w,
                                       std::int64_t& h, const std::string& what) {
  if (b.size() < 2 || b[0] != magic[0] || b[1] != magic[1])
    throw IoError(what + ": not a " + std::string(magic) + " file");
  std::size_t pos = 2;
  auto next_int = [&]() -> std::int64_t {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(b[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    if (pos >= b.size() || !std::isdigit(b[pos])) throw IoError(what + ": malformed header");
    std::int64_t v = 0;
    while (pos < b.size() && std::isdigit(b[pos])) {
      v = v * 10 + (b[pos++] - '0');
      if (v > (1 << 20)) throw IoError(what + ": header value out of range");
    }
    return v;
  };
  w = next_int();
  h = next_int();
  const std::int64_t maxval = next_int();
  if (w < 1 || h < 1) throw IoError(what + ": empty image");
  if (maxval != 255) throw IoError(what + ": only 8-bit files (maxval 255) are supported");
  if (pos >= b.size() || !std::isspace(b[pos])) throw IoError(what + ": malformed header");
  return pos + 1;
}
}  // namespace detail

inline Image decode_ppm(std::span<const std::uint8_t> bytes, const std::string& what = "ppm") {
  Image img;
  const std::size_t off = detail::parse_netpbm_header(bytes, "P6", img.w, img.h, what);
  const auto n = static_cast<std::size_t>(3 * img.w * img.h);
  if (bytes.size() - off != n) throw IoError(what + ": pixel data length does not match header");
  img.rgb.assign(bytes.begin() + static_cast<std::ptrdiff_t>(off), bytes.end());
  return img;
}

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.w) + " " + std::to_string(img.h) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.rgb.data()), img.rgb.size());
  return out;
}

inline Image read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path), path.string()); }
inline void write_ppm(const Image& img, const std::filesystem::path& path) { atomic_write(path, encode_ppm(img)); }

/// Masks are stored as P5 graymaps with 0 and 255.
inline void write_mask_pgm(const Mask& m, const std::filesystem::path& path) {
  std::string out = "P5\n" + std::to_string(m.w) + " " + std::to_string(m.h) + "\n255\n";
  for (auto v : m.data) out.push_back(static_cast<char>(v ? 255 : 0));
  atomic_write(path, out);
}

inline Mask read_mask_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  Mask m;
  const std::size_t off = detail::parse_netpbm_header(bytes, "P5", m.w, m.h, path.string());
  if (bytes.size() - off != static_cast<std::size_t>(m.w * m.h))
    throw IoError(path.string() + ": pixel data length does not match header");
  m.data.resize(static_cast<std::size_t>(m.w * m.h));
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    const auto v = bytes[off + i];
    if (v != 0 && v != 255) throw IoError(path.string() + ": mask pixels must be 0 or 255");
    m.data[i] = v ? 1 : 0;
  }
  return m;
}

/// (1, 3, h, w) tensor with values v / 255.
inline Tensor<float> image_to_tensor(const Image& img) {
  Tensor<float> t(Shape{1, 3, img.h, img.w});
  for (std::int64_t c = 0; c < 3; ++c) {
    float* dst = t.plane(0, c);
    for (std::int64_t i = 0; i < img.h * img.w; ++i) dst[i] = static_cast<float>(img.rgb[std::size_t(3 * i + c)]) / 255.0f;
  }
  return t;
}

inline Image tensor_to_image(const Tensor<float>& t) {
  const Shape& s = t.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("tensor_to_image", "n/c", "expected (1,3,h,w), got " + s.str());
  Image img(s.h, s.w);
  for (std::int64_t c = 0; c < 3; ++c) {
    const float* src = t.plane(0, c);
    for (std::int64_t i = 0; i < s.h * s.w; ++i) {
      const float v = std::clamp(src[i], 0.0f, 1.0f);
      img.rgb[std::size_t(3 * i + c)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  return img;
}

inline std::array<std::uint8_t, 3> class_color(int class_id) {
  static constexpr std::array<std::array<std::uint8_t, 3>, 10> palette{{{255, 255, 0},
                                                                          {0, 255, 255},
                                                                          {255, 0, 255},
                                                                          {255, 128, 0},
                                                                          {0, 128, 255},
                                                                          {128, 0, 255},
                                                                          {255, 255, 255},
                                                                          {0, 0, 0},
                                                                          {128, 255, 0},
                                                                          {255, 0, 128}}};
  return palette[static_cast<std::size_t>(class_id) % palette.size()];
}

namespace detail {
/// Moves channel value v toward 255 by `alpha` of the gap, at least one step.
inline std::uint8_t tint_up(std::uint8_t v, double alpha) {
  if (v == 255) return v;
  const long step = std::max(1L, std::lround(alpha * (255 - v)));
  return static_cast<std::uint8_t>(std::min<long>(255, v + step));
}
inline std::uint8_t tint_down(std::uint8_t v, double keep) { return static_cast<std::uint8_t>(std::lround(v * keep)); }
}  // namespace detail

/// Drivable area tinted green, lanes red, boxes as 2-px outlines in class colors.
inline Image overlay(const Image& base, std::span<const Detection> dets, const Mask& drivable, const Mask& lane) {
  if (drivable.h != base.h || drivable.w != base.w || lane.h != base.h || lane.w != base.w)
    throw ShapeError("render_overlay", "h/w", "masks must match the image resolution");
  Image img = base;
  constexpr double alpha = 0.4;
  for (std::int64_t i = 0; i < img.h; ++i) {
    for (std::int64_t j = 0; j < img.w; ++j) {
      std::uint8_t* p = img.px(i, j);
      if (drivable.at(i, j)) {
        p[0] = detail::tint_down(p[0], 1 - alpha);
        p[1] = detail::tint_up(p[1], alpha);
        p[2] = detail::tint_down(p[2], 1 - alpha);
      }
      if (lane.at(i, j)) {
        p[0] = detail::tint_up(p[0], 0.6);
        p[1] = detail::tint_down(p[1], 0.4);
        p[2] = detail::tint_down(p[2], 0.4);
      }
    }
  }
  for (const Detection& d : dets) {
    const auto color = class_color(d.class_id);
    auto clampx = [&](double v) { return std::clamp<std::int64_t>(std::llround(v), 0, img.w - 1); };
    auto clampy = [&](double v) { return std::clamp<std::int64_t>(std::llround(v), 0, img.h - 1); };
    const std::int64_t x1 = clampx(d.box.x1()), x2 = clampx(d.box.x2());
    const std::int64_t y1 = clampy(d.box.y1()), y2 = clampy(d.box.y2());
    auto put = [&](std::int64_t i, std::int64_t j) {
      if (i < 0 || j < 0 || i >= img.h || j >= img.w) return;
      std::copy(color.begin(), color.end(), img.px(i, j));
    };
    for (int t = 0; t < 2; ++t) {
      for (std::int64_t j = x1; j <= x2; ++j) {
        put(y1 + t, j);
        put(y2 - t, j);
      }
      for (std::int64_t i = y1; i <= y2; ++i) {
        put(i, x1 + t);
        put(i, x2 - t);
      }
    }
  }
  return img;
}

inline void render_overlay(const Tensor<float>& image, std::span<const Detection> dets, const Mask& drivable,
                           const Mask& lane, const std::filesystem::path& out_path) {
  write_ppm(overlay(tensor_to_image(image), dets, drivable, lane), out_path);
}

}  // namespace mtpn
