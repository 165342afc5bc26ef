#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "mtpn/error.hpp"

namespace mtpn {

/// (n, c, h, w) extents of a rank-4 tensor.
struct Shape {
  std::int64_t n = 1;
  std::int64_t c = 1;
  std::int64_t h = 1;
  std::int64_t w = 1;

  constexpr std::int64_t numel() const noexcept { return n * c * h * w; }
  constexpr std::int64_t plane() const noexcept { return h * w; }
  constexpr bool positive() const noexcept { return n > 0 && c > 0 && h > 0 && w > 0; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
           "," + std::to_string(w) + ")";
  }
};

enum class Precision { single, double_ };

template <class T>
concept Element = std::is_same_v<T, float> || std::is_same_v<T, double>;

template <Element T>
constexpr Precision precision_of() {
  return std::is_same_v<T, float> ? Precision::single : Precision::double_;
}

/// Dense rank-4 array stored contiguously in n -> c -> h -> w order.
///
/// The precision tag is the template argument, so operators taking two
/// tensors reject mixed precision at compile time.
template <Element T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : Tensor(Shape{}) {}

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape) {
    check_shape(shape);
    data_.assign(static_cast<std::size_t>(shape.numel()), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    check_shape(shape);
    if (static_cast<std::int64_t>(data_.size()) != shape.numel()) {
      throw ShapeError("tensor", "data length",
                       std::to_string(data_.size()) + " != numel of " + shape.str());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::int64_t numel() const noexcept { return shape_.numel(); }
  static constexpr Precision precision() { return precision_of<T>(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> data() noexcept { return data_; }
  const T* ptr() const noexcept { return data_.data(); }
  T* ptr() noexcept { return data_.data(); }

  std::size_t index(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const noexcept {
    return static_cast<std::size_t>(((n * shape_.c + c) * shape_.h + h) * shape_.w + w);
  }
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) noexcept {
    return data_[index(n, c, h, w)];
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Pointer to the start of plane (n, c).
  const T* plane(std::int64_t n, std::int64_t c) const noexcept { return ptr() + index(n, c, 0, 0); }
  T* plane(std::int64_t n, std::int64_t c) noexcept { return ptr() + index(n, c, 0, 0); }

  template <Element U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& s) {
    if (!s.positive()) throw ShapeError("tensor", "shape", "extents must be positive, got " + s.str());
  }

  Shape shape_;
  std::vector<T> data_;
};

}  // namespace mtpn
