#pragma once

// Vector-Jacobian products for every differentiable operator in ops.hpp.
// Each function takes the recorded forward inputs plus the upstream gradient
// and returns gradients for the differentiable inputs and parameters.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "mtpn/ops.hpp"

namespace mtpn::vjp {

using ops::i64;

namespace detail {
inline void check_upstream(const char* op, const Shape& expected, const Shape& got) {
  if (!(expected == got)) {
    throw ShapeError(std::string("vjp ") + op, "upstream", "expected " + expected.str() + ", got " + got.str());
  }
}
}  // namespace detail

template <Element T>
struct Conv2dGrads {
  Tensor<T> input;
  Tensor<T> weight;
  std::vector<T> bias;  // empty when the convolution has no bias
};

template <Element T>
Conv2dGrads<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, bool has_bias,
                      const ops::Conv2dParams& params, const Tensor<T>& grad_out) {
  const ops::ConvGeometry g = ops::conv_geometry(input.shape(), weight.shape(), 0, params);
  detail::check_upstream("conv2d", Shape{g.n, g.cout, g.hout, g.wout}, grad_out.shape());
  Conv2dGrads<T> r{Tensor<T>(input.shape()), Tensor<T>(weight.shape()), {}};
  const i64 hw_out = g.hout * g.wout;

  if (has_bias) {
    r.bias.assign(static_cast<std::size_t>(g.cout), T(0));
    for (i64 n = 0; n < g.n; ++n)
      for (i64 c = 0; c < g.cout; ++c) {
        const T* p = grad_out.plane(n, c);
        T sum = 0;
        for (i64 i = 0; i < hw_out; ++i) sum += p[i];
        r.bias[static_cast<std::size_t>(c)] += sum;
      }
  }

  if (g.depthwise()) {
    const i64 kk = g.kh * g.kw;
    for (i64 n = 0; n < g.n; ++n) {
      for (i64 c = 0; c < g.cin; ++c) {
        const T* src = input.plane(n, c);
        const T* go = grad_out.plane(n, c);
        const T* wk = weight.ptr() + c * kk;
        T* gi = r.input.plane(n, c);
        T* gw = r.weight.ptr() + c * kk;
        for (i64 oy = 0; oy < g.hout; ++oy) {
          for (i64 ky = 0; ky < g.kh; ++ky) {
            const i64 iy = oy * g.sh - g.ph + ky;
            if (iy < 0 || iy >= g.h) continue;
            for (i64 kx = 0; kx < g.kw; ++kx) {
              auto [lo, hi] = ops::detail::valid_range(g.wout, g.w, g.sw, g.pw, kx);
              const T wv = wk[ky * g.kw + kx];
              T acc = 0;
              for (i64 ox = lo; ox < hi; ++ox) {
                const i64 ix = ox * g.sw - g.pw + kx;
                const T up = go[oy * g.wout + ox];
                gi[iy * g.w + ix] += wv * up;
                acc += up * src[iy * g.w + ix];
              }
              gw[ky * g.kw + kx] += acc;
            }
          }
        }
      }
    }
    return r;
  }

  const i64 patch = g.patch();
  const i64 chunk = ops::detail::rows_per_chunk(g);
  std::vector<T> col(static_cast<std::size_t>(patch * chunk * g.wout));
  std::vector<T> gcol(col.size());
  for (i64 n = 0; n < g.n; ++n) {
    for (i64 gi = 0; gi < g.groups; ++gi) {
      const T* in_g = input.plane(n, gi * g.cin_g);
      const T* w_g = weight.ptr() + gi * g.cout_g * patch;
      const T* go_g = grad_out.plane(n, gi * g.cout_g);
      T* gw_g = r.weight.ptr() + gi * g.cout_g * patch;
      T* gin_g = r.input.plane(n, gi * g.cin_g);
      if (g.pointwise()) {
        blas::gemm(false, true, int(g.cout_g), int(patch), int(hw_out), T(1), go_g, int(hw_out), in_g,
                   int(hw_out), T(1), gw_g, int(patch));
        blas::gemm(true, false, int(patch), int(hw_out), int(g.cout_g), T(1), w_g, int(patch), go_g,
                   int(hw_out), T(0), gin_g, int(hw_out));
        continue;
      }
      for (i64 oy0 = 0; oy0 < g.hout; oy0 += chunk) {
        const i64 oy1 = std::min(g.hout, oy0 + chunk);
        const i64 cols = (oy1 - oy0) * g.wout;
        const T* go_chunk = go_g + oy0 * g.wout;
        ops::detail::im2col_rows(in_g, g, oy0, oy1, col.data());
        blas::gemm(false, true, int(g.cout_g), int(patch), int(cols), T(1), go_chunk, int(hw_out), col.data(),
                   int(cols), T(1), gw_g, int(patch));
        blas::gemm(true, false, int(patch), int(cols), int(g.cout_g), T(1), w_g, int(patch), go_chunk,
                   int(hw_out), T(0), gcol.data(), int(cols));
        ops::detail::col2im_rows(gcol.data(), g, oy0, oy1, gin_g);
      }
    }
  }
  return r;
}

template <Element T>
struct BatchnormGrads {
  Tensor<T> input;
  std::vector<T> gamma;
  std::vector<T> beta;
};

/// Gradients of inference-mode batchnorm. Running statistics are constants.
template <Element T>
BatchnormGrads<T> batchnorm_infer(const Tensor<T>& x, std::span<const T> gamma, std::span<const T> mean,
                                  std::span<const T> var, T eps, const Tensor<T>& grad_out) {
  detail::check_upstream("batchnorm", x.shape(), grad_out.shape());
  const Shape& s = x.shape();
  BatchnormGrads<T> r{Tensor<T>(s), std::vector<T>(static_cast<std::size_t>(s.c)),
                      std::vector<T>(static_cast<std::size_t>(s.c))};
  for (i64 c = 0; c < s.c; ++c) {
    const auto k = static_cast<std::size_t>(c);
    const T inv_std = T(1) / std::sqrt(var[k] + eps);
    const T scale = gamma[k] * inv_std;
    T dg = 0, db = 0;
    for (i64 n = 0; n < s.n; ++n) {
      const T* src = x.plane(n, c);
      const T* go = grad_out.plane(n, c);
      T* gi = r.input.plane(n, c);
      for (i64 i = 0; i < s.plane(); ++i) {
        gi[i] = go[i] * scale;
        dg += go[i] * (src[i] - mean[k]) * inv_std;
        db += go[i];
      }
    }
    r.gamma[k] = dg;
    r.beta[k] = db;
  }
  return r;
}

template <Element T>
Tensor<T> relu(const Tensor<T>& x, const Tensor<T>& grad_out) {
  detail::check_upstream("relu", x.shape(), grad_out.shape());
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < g.data().size(); ++i) g[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <Element T>
Tensor<T> relu6(const Tensor<T>& x, const Tensor<T>& grad_out) {
  detail::check_upstream("relu6", x.shape(), grad_out.shape());
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < g.data().size(); ++i) g[i] = (x[i] > T(0) && x[i] < T(6)) ? grad_out[i] : T(0);
  return g;
}

/// Takes the forward output y = sigmoid(x).
template <Element T>
Tensor<T> sigmoid(const Tensor<T>& y, const Tensor<T>& grad_out) {
  detail::check_upstream("sigmoid", y.shape(), grad_out.shape());
  Tensor<T> g(y.shape());
  for (std::size_t i = 0; i < g.data().size(); ++i) g[i] = grad_out[i] * y[i] * (T(1) - y[i]);
  return g;
}

/// Takes the forward output y = softmax_channels(x).
template <Element T>
Tensor<T> softmax_channels(const Tensor<T>& y, const Tensor<T>& grad_out) {
  detail::check_upstream("softmax", y.shape(), grad_out.shape());
  const Shape& s = y.shape();
  Tensor<T> g(s);
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 i = 0; i < s.plane(); ++i) {
      T dot = 0;
      for (i64 c = 0; c < s.c; ++c) dot += grad_out.plane(n, c)[i] * y.plane(n, c)[i];
      for (i64 c = 0; c < s.c; ++c) g.plane(n, c)[i] = y.plane(n, c)[i] * (grad_out.plane(n, c)[i] - dot);
    }
  }
  return g;
}

/// Addition passes the upstream gradient to both operands unchanged.
template <Element T>
std::pair<Tensor<T>, Tensor<T>> add(const Tensor<T>& grad_out) {
  return {grad_out, grad_out};
}

template <Element T>
std::vector<Tensor<T>> concat_channels(std::span<const Shape> part_shapes, const Tensor<T>& grad_out) {
  std::vector<Tensor<T>> out;
  i64 channels = 0;
  for (const Shape& s : part_shapes) channels += s.c;
  if (part_shapes.empty()) throw ShapeError("vjp concat", "inputs", "no parts");
  const Shape& f = part_shapes.front();
  detail::check_upstream("concat", Shape{f.n, channels, f.h, f.w}, grad_out.shape());
  const i64 hw = f.plane();
  i64 offset = 0;
  for (const Shape& s : part_shapes) {
    Tensor<T> part(s);
    for (i64 n = 0; n < s.n; ++n)
      std::copy(grad_out.plane(n, offset), grad_out.plane(n, offset) + s.c * hw, part.plane(n, 0));
    offset += s.c;
    out.push_back(std::move(part));
  }
  return out;
}

/// Routes each output gradient to the first maximal element of its window.
template <Element T>
Tensor<T> maxpool(const Tensor<T>& x, const ops::PoolParams& p, const Tensor<T>& grad_out) {
  const Shape& s = x.shape();
  const Shape os = ops::pool_output_shape("maxpool", s, p);
  detail::check_upstream("maxpool", os, grad_out.shape());
  Tensor<T> g(s);
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const T* src = x.plane(n, c);
      const T* go = grad_out.plane(n, c);
      T* gi = g.plane(n, c);
      for (i64 oy = 0; oy < os.h; ++oy) {
        const i64 y0 = std::max<i64>(0, oy * p.stride - p.pad);
        const i64 y1 = std::min<i64>(s.h, oy * p.stride - p.pad + p.kernel);
        for (i64 ox = 0; ox < os.w; ++ox) {
          const i64 x0 = std::max<i64>(0, ox * p.stride - p.pad);
          const i64 x1 = std::min<i64>(s.w, ox * p.stride - p.pad + p.kernel);
          i64 best = y0 * s.w + x0;
          for (i64 y = y0; y < y1; ++y)
            for (i64 xx = x0; xx < x1; ++xx)
              if (src[y * s.w + xx] > src[best]) best = y * s.w + xx;
          gi[best] += go[oy * os.w + ox];
        }
      }
    }
  }
  return g;
}

template <Element T>
Tensor<T> avgpool(const Shape& input_shape, const ops::PoolParams& p, const Tensor<T>& grad_out) {
  const Shape& s = input_shape;
  const Shape os = ops::pool_output_shape("avgpool", s, p);
  detail::check_upstream("avgpool", os, grad_out.shape());
  Tensor<T> g(s);
  const T inv = T(1) / T(p.kernel * p.kernel);
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const T* go = grad_out.plane(n, c);
      T* gi = g.plane(n, c);
      for (i64 oy = 0; oy < os.h; ++oy) {
        const i64 y0 = std::max<i64>(0, oy * p.stride - p.pad);
        const i64 y1 = std::min<i64>(s.h, oy * p.stride - p.pad + p.kernel);
        for (i64 ox = 0; ox < os.w; ++ox) {
          const i64 x0 = std::max<i64>(0, ox * p.stride - p.pad);
          const i64 x1 = std::min<i64>(s.w, ox * p.stride - p.pad + p.kernel);
          const T share = go[oy * os.w + ox] * inv;
          for (i64 y = y0; y < y1; ++y)
            for (i64 xx = x0; xx < x1; ++xx) gi[y * s.w + xx] += share;
        }
      }
    }
  }
  return g;
}

template <Element T>
Tensor<T> global_avgpool(const Shape& input_shape, const Tensor<T>& grad_out) {
  const Shape& s = input_shape;
  detail::check_upstream("global_avgpool", Shape{s.n, s.c, 1, 1}, grad_out.shape());
  Tensor<T> g(s);
  for (i64 n = 0; n < s.n; ++n)
    for (i64 c = 0; c < s.c; ++c) {
      const T share = grad_out.at(n, c, 0, 0) / T(s.plane());
      std::fill(g.plane(n, c), g.plane(n, c) + s.plane(), share);
    }
  return g;
}

template <Element T>
Tensor<T> resize_bilinear(const Shape& input_shape, const Tensor<T>& grad_out) {
  const Shape& s = input_shape;
  const Shape& os = grad_out.shape();
  if (os.n != s.n || os.c != s.c) {
    throw ShapeError("vjp resize_bilinear", "upstream", "batch/channel mismatch " + os.str() + " vs " + s.str());
  }
  Tensor<T> g(s);
  if (os.h == s.h && os.w == s.w) {
    std::copy(grad_out.data().begin(), grad_out.data().end(), g.data().begin());
    return g;
  }
  const ops::LinearTaps ty = ops::linear_taps(s.h, os.h);
  const ops::LinearTaps tx = ops::linear_taps(s.w, os.w);
  for (i64 n = 0; n < s.n; ++n) {
    for (i64 c = 0; c < s.c; ++c) {
      const T* go = grad_out.plane(n, c);
      T* gi = g.plane(n, c);
      for (i64 oy = 0; oy < os.h; ++oy) {
        const auto ky = static_cast<std::size_t>(oy);
        const T ly = static_cast<T>(ty.frac[ky]);
        T* r0 = gi + ty.lo[ky] * s.w;
        T* r1 = gi + ty.hi[ky] * s.w;
        for (i64 ox = 0; ox < os.w; ++ox) {
          const auto kx = static_cast<std::size_t>(ox);
          const T lx = static_cast<T>(tx.frac[kx]);
          const T up = go[oy * os.w + ox];
          r0[tx.lo[kx]] += (T(1) - ly) * (T(1) - lx) * up;
          r0[tx.hi[kx]] += (T(1) - ly) * lx * up;
          r1[tx.lo[kx]] += ly * (T(1) - lx) * up;
          r1[tx.hi[kx]] += ly * lx * up;
        }
      }
    }
  }
  return g;
}

template <Element T>
struct FusionGrads {
  std::vector<Tensor<T>> inputs;
  std::vector<T> weights;
};

/// Gradients of the normalized weighted fusion with respect to each input
/// and to the raw (pre-relu) fusion weights.
template <Element T>
FusionGrads<T> weighted_fusion(std::span<const Tensor<T>* const> inputs, std::span<const T> raw_weights, T eps,
                               const Tensor<T>& grad_out) {
  detail::check_upstream("fusion", inputs.front()->shape(), grad_out.shape());
  const std::size_t m = inputs.size();
  const std::vector<T> coef = ops::fusion_coefficients(raw_weights, eps);
  T sum = eps;
  for (T w : raw_weights) sum += std::max(w, T(0));

  FusionGrads<T> r;
  std::vector<T> dcoef(m, T(0));
  for (std::size_t k = 0; k < m; ++k) {
    Tensor<T> gk(grad_out.shape());
    auto src = inputs[k]->data();
    T dot = 0;
    for (std::size_t i = 0; i < gk.data().size(); ++i) {
      gk[i] = coef[k] * grad_out[i];
      dot += grad_out[i] * src[i];
    }
    dcoef[k] = dot;
    r.inputs.push_back(std::move(gk));
  }
  // d coef_i / d w_k = [i == k] / S - w_i / S^2, gated by relu'(w_k).
  T weighted = 0;
  for (std::size_t i = 0; i < m; ++i) weighted += dcoef[i] * std::max(raw_weights[i], T(0));
  r.weights.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    r.weights[k] = raw_weights[k] > T(0) ? dcoef[k] / sum - weighted / (sum * sum) : T(0);
  }
  return r;
}

}  // namespace mtpn::vjp
