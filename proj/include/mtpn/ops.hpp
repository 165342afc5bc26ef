#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mtpn/blas.hpp"
#include "mtpn/error.hpp"
#include "mtpn/tally.hpp"
#include "mtpn/tensor.hpp"

namespace mtpn::ops {

using i64 = std::int64_t;

struct Conv2dParams {
  int stride_h = 1;
  int stride_w = 1;
  int pad_h = 0;
  int pad_w = 0;
  int groups = 1;
};

/// Resolved extents of one convolution call.
struct ConvGeometry {
  i64 n, cin, h, w;
  i64 cout, kh, kw;
  i64 sh, sw, ph, pw;
  i64 groups, cin_g, cout_g;
  i64 hout, wout;

  bool depthwise() const noexcept { return groups == cin && cin_g == 1 && cout_g == 1; }
  bool pointwise() const noexcept {
    return kh == 1 && kw == 1 && sh == 1 && sw == 1 && ph == 0 && pw == 0;
  }
  i64 patch() const noexcept { return cin_g * kh * kw; }
  i64 macs() const noexcept { return cout * cin_g * kh * kw * hout * wout * n; }
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& wt, i64 bias_len, const Conv2dParams& p) {
  const char* op = "conv2d";
  if (p.groups < 1) throw ShapeError(op, "groups", "must be positive, got " + std::to_string(p.groups));
  if (p.stride_h < 1 || p.stride_w < 1) throw ShapeError(op, "stride", "must be positive");
  if (p.pad_h < 0 || p.pad_w < 0) throw ShapeError(op, "padding", "must be nonnegative");
  ConvGeometry g{};
  g.n = in.n;
  g.cin = in.c;
  g.h = in.h;
  g.w = in.w;
  g.cout = wt.n;
  g.kh = wt.h;
  g.kw = wt.w;
  g.sh = p.stride_h;
  g.sw = p.stride_w;
  g.ph = p.pad_h;
  g.pw = p.pad_w;
  g.groups = p.groups;
  if (g.cin % g.groups != 0) {
    throw ShapeError(op, "cin", std::to_string(g.cin) + " not divisible by groups " + std::to_string(g.groups));
  }
  if (g.cout % g.groups != 0) {
    throw ShapeError(op, "cout", std::to_string(g.cout) + " not divisible by groups " + std::to_string(g.groups));
  }
  g.cin_g = g.cin / g.groups;
  g.cout_g = g.cout / g.groups;
  if (wt.c != g.cin_g) {
    throw ShapeError(op, "cin/groups", "weight has " + std::to_string(wt.c) + " input channels, input provides " +
                                           std::to_string(g.cin_g) + " per group");
  }
  if (bias_len != 0 && bias_len != g.cout) {
    throw ShapeError(op, "bias", "length " + std::to_string(bias_len) + " != cout " + std::to_string(g.cout));
  }
  if (g.h + 2 * g.ph < g.kh) throw ShapeError(op, "height", "padded input smaller than kernel");
  if (g.w + 2 * g.pw < g.kw) throw ShapeError(op, "width", "padded input smaller than kernel");
  g.hout = (g.h + 2 * g.ph - g.kh) / g.sh + 1;
  g.wout = (g.w + 2 * g.pw - g.kw) / g.sw + 1;
  if (g.hout <= 0 || g.wout <= 0) throw ShapeError(op, "output size", "nonpositive");
  return g;
}

inline Shape conv_output_shape(const Shape& in, const Shape& wt, const Conv2dParams& p) {
  auto g = conv_geometry(in, wt, 0, p);
  return {g.n, g.cout, g.hout, g.wout};
}

namespace detail {

inline constexpr i64 kColumnBudget = i64{1} << 22;

inline i64 ceil_div(i64 a, i64 b) { return a <= 0 ? 0 : (a + b - 1) / b; }

// Half-open range of output columns whose input column ox*s - p + k is in [0, w).
inline std::pair<i64, i64> valid_range(i64 out, i64 in, i64 s, i64 p, i64 k) {
  i64 lo = ceil_div(p - k, s);
  i64 hi = ceil_div(in + p - k, s);
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

inline i64 rows_per_chunk(const ConvGeometry& g) {
  const i64 per_row = std::max<i64>(1, g.patch() * g.wout);
  return std::clamp<i64>(kColumnBudget / per_row, 1, g.hout);
}

// Unfolds output rows [oy0, oy1) of one group into a (patch x cols) matrix.
template <Element T>
void im2col_rows(const T* in, const ConvGeometry& g, i64 oy0, i64 oy1, T* col) {
  const i64 cols = (oy1 - oy0) * g.wout;
  for (i64 ci = 0; ci < g.cin_g; ++ci) {
    const T* src = in + ci * g.h * g.w;
    for (i64 ky = 0; ky < g.kh; ++ky) {
      for (i64 kx = 0; kx < g.kw; ++kx) {
        T* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        auto [lo, hi] = valid_range(g.wout, g.w, g.sw, g.pw, kx);
        for (i64 oy = oy0; oy < oy1; ++oy) {
          T* dst = row + (oy - oy0) * g.wout;
          const i64 iy = oy * g.sh - g.ph + ky;
          if (iy < 0 || iy >= g.h) {
            std::fill(dst, dst + g.wout, T(0));
            continue;
          }
          const i64 base = iy * g.w - g.pw + kx;
          std::fill(dst, dst + lo, T(0));
          if (g.sw == 1) {
            std::copy(src + base + lo, src + base + hi, dst + lo);
          } else {
            for (i64 ox = lo; ox < hi; ++ox) dst[ox] = src[base + ox * g.sw];
          }
          std::fill(dst + hi, dst + g.wout, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col_rows: scatters a (patch x cols) matrix back into the input planes.
template <Element T>
void col2im_rows(const T* col, const ConvGeometry& g, i64 oy0, i64 oy1, T* in) {
  const i64 cols = (oy1 - oy0) * g.wout;
  for (i64 ci = 0; ci < g.cin_g; ++ci) {
    T* dst = in + ci * g.h * g.w;
    for (i64 ky = 0; ky < g.kh; ++ky) {
      for (i64 kx = 0; kx < g.kw; ++kx) {
        const T* row = col + ((ci * g.kh + ky) * g.kw + kx) * cols;
        auto [lo, hi] = valid_range(g.wout, g.w, g.sw, g.pw, kx);
        for (i64 oy = oy0; oy < oy1; ++oy) {
          const i64 iy = oy * g.sh - g.ph + ky;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = row + (oy - oy0) * g.wout;
          const i64 base = iy * g.w - g.pw + kx;
          for (i64 ox = lo; ox < hi; ++ox) dst[base + ox * g.sw] += src[ox];
        }
      }
    }
  }
}

template <Element T>
void depthwise_forward(const T* in, const T* wk, const ConvGeometry& g, T* out) {
  for (i64 oy = 0; oy < g.hout; ++oy) {
    T* drow = out + oy * g.wout;
    for (i64 ky = 0; ky < g.kh; ++ky) {
      const i64 iy = oy * g.sh - g.ph + ky;
      if (iy < 0 || iy >= g.h) continue;
      for (i64 kx = 0; kx < g.kw; ++kx) {
        auto [lo, hi] = valid_range(g.wout, g.w, g.sw, g.pw, kx);
        const T wv = wk[ky * g.kw + kx];
        const T* srow = in + iy * g.w;
        const i64 base = kx - g.pw;
        if (g.sw == 1) {
          for (i64 ox = lo; ox < hi; ++ox) drow[ox] += wv * srow[ox + base];
        } else {
          for (i64 ox = lo; ox < hi; ++ox) drow[ox] += wv * srow[ox * g.sw + base];
        }
      }
    }
  }
}

template <Element T>
void check_same(const char* op, const Shape& a, const Shape& b) {
  if (a.n != b.n) throw ShapeError(op, "n", a.str() + " vs " + b.str());
  if (a.c != b.c) throw ShapeError(op, "c", a.str() + " vs " + b.str());
  if (a.h != b.h) throw ShapeError(op, "h", a.str() + " vs " + b.str());
  if (a.w != b.w) throw ShapeError(op, "w", a.str() + " vs " + b.str());
}

inline std::uint64_t u64(i64 v) { return static_cast<std::uint64_t>(v); }

}  // namespace detail

/// 2-D cross-correlation with zero padding and channel groups.
template <Element T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::span<const T> bias,
                 const Conv2dParams& params) {
  const ConvGeometry g = conv_geometry(input.shape(), weight.shape(), static_cast<i64>(bias.size()), params);
  Tensor<T> out(Shape{g.n, g.cout, g.hout, g.wout});
  const i64 hw_out = g.hout * g.wout;

  if (g.depthwise()) {
    for (i64 n = 0; n < g.n; ++n) {
      for (i64 c = 0; c < g.cin; ++c) {
        detail::depthwise_forward(input.plane(n, c), weight.ptr() + c * g.kh * g.kw, g, out.plane(n, c));
      }
    }
  } else {
    const i64 patch = g.patch();
    const i64 chunk = detail::rows_per_chunk(g);
    std::vector<T> col(g.pointwise() ? 0 : static_cast<std::size_t>(patch * chunk * g.wout));
    for (i64 n = 0; n < g.n; ++n) {
      for (i64 gi = 0; gi < g.groups; ++gi) {
        const T* in_g = input.plane(n, gi * g.cin_g);
        const T* w_g = weight.ptr() + gi * g.cout_g * patch;
        T* out_g = out.plane(n, gi * g.cout_g);
        if (g.pointwise()) {
          blas::gemm(false, false, int(g.cout_g), int(hw_out), int(patch), T(1), w_g, int(patch), in_g,
                     int(hw_out), T(0), out_g, int(hw_out));
          continue;
        }
        for (i64 oy0 = 0; oy0 < g.hout; oy0 += chunk) {
          const i64 oy1 = std::min(g.hout, oy0 + chunk);
          const i64 cols = (oy1 - oy0) * g.wout;
          detail::im2col_rows(in_g, g, oy0, oy1, col.data());
          blas::gemm(false, false, int(g.cout_g), int(cols), int(patch), T(1), w_g, int(patch), col.data(),
                     int(cols), T(0), out_g + oy0 * g.wout, int(hw_out));
        }
      }
    }
  }

  if (!bias.empty()) {
    for (i64 n = 0; n < g.n; ++n) {
      for (i64 c = 0; c < g.cout; ++c) {
        T* p = out.plane(n, c);
        const T b = bias[static_cast<std::size_t>(c)];
        for (i64 i = 0; i < hw_out; ++i) p[i] += b;
      }
    }
  }

  const auto macs = detail::u64(g.macs());
  record_op("conv2d", macs, cost::flops_per_mac * macs + (bias.empty() ? 0 : detail::u64(g.cout * hw_out * g.n)));
  return out;
}

/// Inference-mode batch normalization: gamma * (x - mean) / sqrt(var + eps) + beta.
template <Element T>
Tensor<T> batchnorm_infer(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> beta,
                          std::span<const T> mean, std::span<const T> var, T eps) {
  const Shape& s = x.shape();
  const auto c = static_cast<std::size_t>(s.c);
  if (gamma.size() != c) throw ShapeError("batchnorm", "gamma", "length != channels " + std::to_string(c));
  if (beta.size() != c) throw ShapeError("batchnorm", "beta", "length != channels " + std::to_string(c));
  if (mean.size() != c) throw ShapeError("batchnorm", "mean", "length != channels " + std::to_string(c));
  if (var.size() != c) throw ShapeError("batchnorm", "var", "length != channels " + std::to_string(c));
  Tensor<T> out(s);
  for (i64 ch = 0; ch < s.c; ++ch) {
    const auto k = static_cast<std::size_t>(ch);
    if (!(var[k] >= T(0))) throw ShapeError("batchnorm", "var", "must be nonnegative");
    const T scale = gamma[k] / std::sqrt(var[k] + eps);
    const T shift = beta[k] - mean[k] * scale;
    for (i64 n = 0; n < s.n; ++n) {
      const T* src = x.plane(n, ch);
      T* dst = out.plane(n, ch);
      for (i64 i = 0; i < s.plane(); ++i) dst[i] = src[i] * scale + shift;
    }
  }
  record_op("batchnorm", 0, cost::batchnorm * detail::u64(x.numel()));
  return out;
}

template <Element T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > T(0) ? src[i] : T(0);
  record_op("relu", 0, cost::relu * detail::u64(x.numel()));
  return out;
}

template <Element T>
Tensor<T> relu6(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::clamp(src[i], T(0), T(6));
  record_op("relu6", 0, cost::relu6 * detail::u64(x.numel()));
  return out;
}

template <Element T>
T sigmoid(T v) {
  return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <Element T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sigmoid(src[i]);
  record_op("sigmoid", 0, cost::sigmoid * detail::u64(x.numel()));
  return out;
}

/// Softmax across the channel axis, independently per (n, y, x).
template <Element T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out(s);
  const i64 hw = s.plane();
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 i = 0; i < hw; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (i64 c = 0; c < s.c; ++c) mx = std::max(mx, x.plane(n, c)[i]);
      T sum = 0;
      for (i64 c = 0; c < s.c; ++c) {
        const T e = std::exp(x.plane(n, c)[i] - mx);
        out.plane(n, c)[i] = e;
        sum += e;
      }
      for (i64 c = 0; c < s.c; ++c) out.plane(n, c)[i] /= sum;
    }
  }
  record_op("softmax", 0, cost::softmax * detail::u64(x.numel()));
  return out;
}

template <Element T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same<T>("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  auto pa = a.data();
  auto pb = b.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = pa[i] + pb[i];
  record_op("add", 0, cost::add * detail::u64(a.numel()));
  return out;
}

template <Element T>
Tensor<T> concat_channels(std::span<const Tensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat", "inputs", "need at least one tensor");
  const Shape& first = parts.front()->shape();
  i64 channels = 0;
  for (const Tensor<T>* t : parts) {
    const Shape& s = t->shape();
    if (s.n != first.n) throw ShapeError("concat", "n", s.str() + " vs " + first.str());
    if (s.h != first.h) throw ShapeError("concat", "h", s.str() + " vs " + first.str());
    if (s.w != first.w) throw ShapeError("concat", "w", s.str() + " vs " + first.str());
    channels += s.c;
  }
  Tensor<T> out(Shape{first.n, channels, first.h, first.w});
  const i64 hw = first.plane();
  for (i64 n = 0; n < first.n; ++n) {
    i64 offset = 0;
    for (const Tensor<T>* t : parts) {
      std::copy(t->plane(n, 0), t->plane(n, 0) + t->shape().c * hw, out.plane(n, offset));
      offset += t->shape().c;
    }
  }
  record_op("concat", 0, cost::concat * detail::u64(out.numel()));
  return out;
}

struct PoolParams {
  int kernel = 2;
  int stride = 2;
  int pad = 0;
};

inline Shape pool_output_shape(const char* op, const Shape& in, const PoolParams& p) {
  if (p.kernel < 1 || p.stride < 1) throw ShapeError(op, "kernel", "kernel and stride must be positive");
  if (p.pad < 0 || 2 * p.pad > p.kernel) throw ShapeError(op, "padding", "must lie in [0, kernel/2]");
  if (in.h + 2 * p.pad < p.kernel) throw ShapeError(op, "height", "padded input smaller than kernel");
  if (in.w + 2 * p.pad < p.kernel) throw ShapeError(op, "width", "padded input smaller than kernel");
  return {in.n, in.c, (in.h + 2 * p.pad - p.kernel) / p.stride + 1, (in.w + 2 * p.pad - p.kernel) / p.stride + 1};
}

/// Max pooling; padded positions never win.
template <Element T>
Tensor<T> maxpool(const Tensor<T>& x, const PoolParams& p) {
  const Shape& s = x.shape();
  const Shape os = pool_output_shape("maxpool", s, p);
  Tensor<T> out(os);
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (i64 oy = 0; oy < os.h; ++oy) {
        const i64 y0 = std::max<i64>(0, oy * p.stride - p.pad);
        const i64 y1 = std::min<i64>(s.h, oy * p.stride - p.pad + p.kernel);
        for (i64 ox = 0; ox < os.w; ++ox) {
          const i64 x0 = std::max<i64>(0, ox * p.stride - p.pad);
          const i64 x1 = std::min<i64>(s.w, ox * p.stride - p.pad + p.kernel);
          T best = -std::numeric_limits<T>::infinity();
          for (i64 y = y0; y < y1; ++y)
            for (i64 xx = x0; xx < x1; ++xx) best = std::max(best, src[y * s.w + xx]);
          dst[oy * os.w + ox] = best;
        }
      }
    }
  }
  record_op("maxpool", 0, detail::u64(p.kernel) * detail::u64(p.kernel) * detail::u64(out.numel()));
  return out;
}

/// Average pooling; zero padding counts toward the k*k divisor.
template <Element T>
Tensor<T> avgpool(const Tensor<T>& x, const PoolParams& p) {
  const Shape& s = x.shape();
  const Shape os = pool_output_shape("avgpool", s, p);
  Tensor<T> out(os);
  const T inv = T(1) / T(p.kernel * p.kernel);
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T* dst = out.plane(n, c);
      for (i64 oy = 0; oy < os.h; ++oy) {
        const i64 y0 = std::max<i64>(0, oy * p.stride - p.pad);
        const i64 y1 = std::min<i64>(s.h, oy * p.stride - p.pad + p.kernel);
        for (i64 ox = 0; ox < os.w; ++ox) {
          const i64 x0 = std::max<i64>(0, ox * p.stride - p.pad);
          const i64 x1 = std::min<i64>(s.w, ox * p.stride - p.pad + p.kernel);
          T sum = 0;
          for (i64 y = y0; y < y1; ++y)
            for (i64 xx = x0; xx < x1; ++xx) sum += src[y * s.w + xx];
          dst[oy * os.w + ox] = sum * inv;
        }
      }
    }
  }
  record_op("avgpool", 0, detail::u64(p.kernel) * detail::u64(p.kernel) * detail::u64(out.numel()));
  return out;
}

template <Element T>
Tensor<T> global_avgpool(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      T sum = 0;
      for (i64 i = 0; i < s.plane(); ++i) sum += src[i];
      out.at(n, c, 0, 0) = sum / T(s.plane());
    }
  }
  record_op("global_avgpool", 0, detail::u64(s.plane()) * detail::u64(out.numel()));
  return out;
}

/// Per-axis interpolation taps for half-pixel-center bilinear resizing.
struct LinearTaps {
  std::vector<i64> lo;
  std::vector<i64> hi;
  std::vector<double> frac;
};

inline LinearTaps linear_taps(i64 in, i64 out) {
  LinearTaps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (i64 d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    i64 lo = std::min<i64>(static_cast<i64>(std::floor(src)), in - 1);
    const auto k = static_cast<std::size_t>(d);
    t.lo[k] = lo;
    t.hi[k] = std::min<i64>(lo + 1, in - 1);
    t.frac[k] = src - static_cast<double>(lo);
  }
  return t;
}

template <Element T>
Tensor<T> resize_bilinear(const Tensor<T>& x, i64 out_h, i64 out_w) {
  if (out_h < 1) throw ShapeError("resize_bilinear", "out_h", "must be >= 1");
  if (out_w < 1) throw ShapeError("resize_bilinear", "out_w", "must be >= 1");
  const Shape& s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, out_h, out_w});
  if (out_h == s.h && out_w == s.w) {
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
  } else {
    const LinearTaps ty = linear_taps(s.h, out_h);
    const LinearTaps tx = linear_taps(s.w, out_w);
    for (i64 n = 0; n < s.n; ++n) {
      for (i64 c = 0; c < s.c; ++c) {
        const T* src = x.plane(n, c);
        T* dst = out.plane(n, c);
        for (i64 oy = 0; oy < out_h; ++oy) {
          const auto ky = static_cast<std::size_t>(oy);
          const T ly = static_cast<T>(ty.frac[ky]);
          const T* r0 = src + ty.lo[ky] * s.w;
          const T* r1 = src + ty.hi[ky] * s.w;
          for (i64 ox = 0; ox < out_w; ++ox) {
            const auto kx = static_cast<std::size_t>(ox);
            const T lx = static_cast<T>(tx.frac[kx]);
            const i64 x0 = tx.lo[kx];
            const i64 x1 = tx.hi[kx];
            const T top = (T(1) - lx) * r0[x0] + lx * r0[x1];
            const T bottom = (T(1) - lx) * r1[x0] + lx * r1[x1];
            dst[oy * out_w + ox] = (T(1) - ly) * top + ly * bottom;
          }
        }
      }
    }
  }
  record_op("resize_bilinear", 0, cost::bilinear * detail::u64(out.numel()));
  return out;
}

/// Normalized fusion coefficients relu(w_i) / (eps + sum_j relu(w_j)).
template <Element T>
std::vector<T> fusion_coefficients(std::span<const T> raw_weights, T eps) {
  std::vector<T> c(raw_weights.size());
  T sum = eps;
  for (T w : raw_weights) sum += std::max(w, T(0));
  for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::max(raw_weights[i], T(0)) / sum;
  return c;
}

/// Fast normalized fusion: sum_i coefficient_i * input_i.
template <Element T>
Tensor<T> weighted_fusion(std::span<const Tensor<T>* const> inputs, std::span<const T> raw_weights, T eps) {
  if (inputs.empty()) throw ShapeError("fusion", "inputs", "need at least one tensor");
  if (raw_weights.size() != inputs.size()) {
    throw ShapeError("fusion", "weights", "expected " + std::to_string(inputs.size()) + " weights");
  }
  for (const Tensor<T>* t : inputs) detail::check_same<T>("fusion", t->shape(), inputs.front()->shape());
  const std::vector<T> coef = fusion_coefficients(raw_weights, eps);
  Tensor<T> out(inputs.front()->shape());
  auto dst = out.data();
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto src = inputs[k]->data();
    const T ck = coef[k];
    if (k == 0) {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = ck * src[i];
    } else {
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += ck * src[i];
    }
  }
  const auto m = detail::u64(static_cast<i64>(inputs.size()));
  record_op("fusion", 0, (2 * m - 1) * detail::u64(out.numel()));
  return out;
}

/// Index of the largest channel per pixel, returned as an (n, 1, h, w) tensor.
template <Element T>
Tensor<T> argmax_channels(const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out(Shape{s.n, 1, s.h, s.w});
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 i = 0; i < s.plane(); ++i) {
      i64 best = 0;
      for (i64 c = 1; c < s.c; ++c)
        if (x.plane(n, c)[i] > x.plane(n, best)[i]) best = c;
      out.plane(n, 0)[i] = static_cast<T>(best);
    }
  }
  return out;
}

template <Element T>
Tensor<T> threshold(const Tensor<T>& x, T level) {
  Tensor<T> out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] >= level ? T(1) : T(0);
  return out;
}

}  // namespace mtpn::ops
