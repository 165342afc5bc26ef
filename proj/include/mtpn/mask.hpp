#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtpn/error.hpp"
#include "mtpn/tensor.hpp"

namespace mtpn {

/// Binary (h, w) label map; 1 marks foreground.
struct Mask {
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(std::int64_t height, std::int64_t width, std::uint8_t fill = 0)
      : h(height), w(width), data(static_cast<std::size_t>(height * width), fill) {}

  std::uint8_t& at(std::int64_t i, std::int64_t j) { return data[static_cast<std::size_t>(i * w + j)]; }
  std::uint8_t at(std::int64_t i, std::int64_t j) const { return data[static_cast<std::size_t>(i * w + j)]; }
  std::int64_t size() const noexcept { return h * w; }

  std::int64_t count() const {
    std::int64_t k = 0;
    for (auto v : data) k += v;
    return k;
  }

  void check_binary(const char* what) const {
    if (static_cast<std::int64_t>(data.size()) != h * w) throw ShapeError(what, "mask", "data length != h*w");
    for (auto v : data)
      if (v > 1) throw ValueError(std::string(what) + ": mask value " + std::to_string(v) + " outside {0,1}");
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

/// Per-pixel argmax over the two channels of plane n: 1 where the
/// foreground logit is strictly larger.
template <Element T>
Mask argmax_mask(const Tensor<T>& logits, std::int64_t n = 0) {
  const Shape& s = logits.shape();
  if (s.c != 2) throw ShapeError("argmax_mask", "c", "expected 2 channels, got " + std::to_string(s.c));
  Mask m(s.h, s.w);
  const T* bg = logits.plane(n, 0);
  const T* fg = logits.plane(n, 1);
  for (std::int64_t i = 0; i < m.size(); ++i) m.data[static_cast<std::size_t>(i)] = fg[i] > bg[i] ? 1 : 0;
  return m;
}

}  // namespace mtpn
