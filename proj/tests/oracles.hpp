#pragma once

// Reference implementations used only by the tests. They are written
// directly from the textbook definitions, with no shared code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mtpn/mtpn.hpp"

namespace oracle {

using mtpn::Shape;
using mtpn::Tensor;

template <class T>
Tensor<T> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<T> t(s);
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

/// Six nested loops over (n, cout, oy, ox, ci, ky, kx) with explicit zero padding.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& wt, const std::vector<T>& bias, int sh, int sw, int ph, int pw,
                 int groups) {
  const Shape s = x.shape(), k = wt.shape();
  const std::int64_t cin_g = s.c / groups, cout_g = k.n / groups;
  const std::int64_t ho = (s.h + 2 * ph - k.h) / sh + 1, wo = (s.w + 2 * pw - k.w) / sw + 1;
  Tensor<T> y(Shape{s.n, k.n, ho, wo});
  for (std::int64_t n = 0; n < s.n; ++n)
    for (std::int64_t co = 0; co < k.n; ++co) {
      const std::int64_t g = co / cout_g;
      for (std::int64_t oy = 0; oy < ho; ++oy)
        for (std::int64_t ox = 0; ox < wo; ++ox) {
          double acc = bias.empty() ? 0.0 : double(bias[std::size_t(co)]);
          for (std::int64_t ci = 0; ci < cin_g; ++ci)
            for (std::int64_t ky = 0; ky < k.h; ++ky)
              for (std::int64_t kx = 0; kx < k.w; ++kx) {
                const std::int64_t iy = oy * sh - ph + ky, ix = ox * sw - pw + kx;
                if (iy < 0 || ix < 0 || iy >= s.h || ix >= s.w) continue;
                acc += double(x.at(n, g * cin_g + ci, iy, ix)) * double(wt.at(co, ci, ky, kx));
              }
          y.at(n, co, oy, ox) = static_cast<T>(acc);
        }
    }
  return y;
}

/// Half-pixel bilinear sample of one plane at output pixel (oy, ox).
inline double bilinear_pixel(const std::vector<double>& src, std::int64_t h, std::int64_t w, std::int64_t out_h,
                             std::int64_t out_w, std::int64_t oy, std::int64_t ox) {
  auto coord = [](std::int64_t o, std::int64_t in, std::int64_t out) {
    double c = (o + 0.5) * double(in) / double(out) - 0.5;
    return std::max(c, 0.0);
  };
  const double y = coord(oy, h, out_h), x = coord(ox, w, out_w);
  const auto y0 = std::min<std::int64_t>(std::int64_t(std::floor(y)), h - 1);
  const auto x0 = std::min<std::int64_t>(std::int64_t(std::floor(x)), w - 1);
  const auto y1 = std::min<std::int64_t>(y0 + 1, h - 1), x1 = std::min<std::int64_t>(x0 + 1, w - 1);
  const double fy = y - double(y0), fx = x - double(x0);
  auto at = [&](std::int64_t i, std::int64_t j) { return src[std::size_t(i * w + j)]; };
  return (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
}

/// Central differences of a scalar function of one tensor, evaluated at
/// every element.
template <class T>
Tensor<T> numeric_grad(Tensor<T> x, const std::function<double(const Tensor<T>&)>& f, double step = 1e-5) {
  Tensor<T> g(x.shape());
  for (std::size_t i = 0; i < std::size_t(x.numel()); ++i) {
    const T orig = x[i];
    x[i] = orig + T(step);
    const double up = f(x);
    x[i] = orig - T(step);
    const double down = f(x);
    x[i] = orig;
    g[i] = T((up - down) / (2 * step));
  }
  return g;
}

/// <a, b> over all elements.
template <class T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < std::size_t(a.numel()); ++i) s += double(a[i]) * double(b[i]);
  return s;
}

/// Largest relative error between analytic and numeric gradients, normalized
/// by the larger of the two gradient norms.
template <class T>
double grad_error(const Tensor<T>& analytic, const Tensor<T>& numeric) {
  double diff = 0, scale = 0;
  for (std::size_t i = 0; i < std::size_t(analytic.numel()); ++i) {
    diff = std::max(diff, std::abs(double(analytic[i]) - double(numeric[i])));
    scale = std::max({scale, std::abs(double(analytic[i])), std::abs(double(numeric[i]))});
  }
  return diff / std::max(scale, 1e-12);
}

inline double iou(const mtpn::Box& a, const mtpn::Box& b) {
  const double ix = std::max(0.0, std::min(a.cx + a.w / 2, b.cx + b.w / 2) - std::max(a.cx - a.w / 2, b.cx - b.w / 2));
  const double iy = std::max(0.0, std::min(a.cy + a.h / 2, b.cy + b.h / 2) - std::max(a.cy - a.h / 2, b.cy - b.h / 2));
  const double inter = ix * iy;
  return inter > 0 ? inter / (a.w * a.h + b.w * b.h - inter) : 0.0;
}

/// Exhaustive NMS: a detection survives if no higher-ranked survivor of its
/// class overlaps it at >= thresh.
inline std::vector<mtpn::Detection> nms(const std::vector<mtpn::Detection>& in, double thresh) {
  std::vector<std::size_t> idx(in.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  auto ranks_before = [&](std::size_t a, std::size_t b) {
    const auto &x = in[a], &y = in[b];
    if (x.score != y.score) return x.score > y.score;
    if (x.class_id != y.class_id) return x.class_id < y.class_id;
    if (x.box.cx != y.box.cx) return x.box.cx < y.box.cx;
    if (x.box.cy != y.box.cy) return x.box.cy < y.box.cy;
    return a < b;
  };
  // selection sort by rank
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = i + 1; j < idx.size(); ++j)
      if (ranks_before(idx[j], idx[i])) std::swap(idx[i], idx[j]);
  std::vector<bool> alive(in.size(), false);
  std::vector<mtpn::Detection> out;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    bool keep = true;
    for (std::size_t j = 0; j < i; ++j)
      if (alive[idx[j]] && in[idx[j]].class_id == in[idx[i]].class_id && oracle::iou(in[idx[j]].box, in[idx[i]].box) >= thresh)
        keep = false;
    alive[idx[i]] = keep;
    if (keep) out.push_back(in[idx[i]]);
  }
  return out;
}

struct Slot {
  int scale, anchor;
  std::int64_t i, j;
  bool operator==(const Slot&) const = default;
};

/// Brute-force assignment: for each box in order, scan every
/// (scale, anchor, cell) triple, keep those whose cell contains the center
/// and whose slot is free, and take the best anchor-shape IoU with ties to
/// the lowest scale then anchor.
inline std::vector<Slot> assign(const std::vector<mtpn::GtBox>& gts, const mtpn::ModelConfig& cfg, std::int64_t H,
                                std::int64_t W) {
  std::vector<Slot> taken, out;
  for (const auto& g : gts) {
    Slot best{-1, -1, -1, -1};
    double best_iou = -1;
    for (int k = 0; k < 3; ++k) {
      const int s = mtpn::kDetectionStrides[std::size_t(k)];
      const double base = cfg.anchor_base_scale * s;
      for (int a = 0; a < 3; ++a) {
        const double r = std::sqrt(cfg.aspect_ratios[std::size_t(a)]);
        const double aw = base * r, ah = base / r;
        const double inter = std::min(aw, g.box.w) * std::min(ah, g.box.h);
        const double v = inter / (aw * ah + g.box.w * g.box.h - inter);
        for (std::int64_t i = 0; i < H / s; ++i)
          for (std::int64_t j = 0; j < W / s; ++j) {
            const bool contains = g.box.cx >= j * s && g.box.cx < (j + 1) * s && g.box.cy >= i * s && g.box.cy < (i + 1) * s;
            if (!contains) continue;
            const Slot cand{k, a, i, j};
            if (std::find(taken.begin(), taken.end(), cand) != taken.end()) continue;
            if (v > best_iou) {
              best_iou = v;
              best = cand;
            }
          }
      }
    }
    taken.push_back(best);
    out.push_back(best);
  }
  return out;
}

/// Precision/recall points enumerated over every score cut-off, then AP as
/// the sum over recall steps of the best precision at that recall or beyond.
inline double ap_exhaustive(const std::vector<std::pair<double, bool>>& scored_tp, std::int64_t num_gt) {
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  for (std::size_t cut = 1; cut <= scored_tp.size(); ++cut) {
    std::int64_t tp = 0;
    for (std::size_t i = 0; i < cut; ++i) tp += scored_tp[i].second;
    pr.push_back({double(tp) / double(num_gt), double(tp) / double(cut)});
  }
  double ap = 0, prev_r = 0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    double pmax = 0;
    for (std::size_t j = i; j < pr.size(); ++j) pmax = std::max(pmax, pr[j].second);
    ap += (pr[i].first - prev_r) * pmax;
    prev_r = pr[i].first;
  }
  return ap;
}

/// mAP by explicit matching: sort all detections of a class by score, match
/// each to the unmatched same-image gt of highest IoU >= thresh.
inline std::pair<double, double> map_and_recall(const std::vector<std::vector<mtpn::Detection>>& preds,
                                                const std::vector<std::vector<mtpn::GtBox>>& gts, double thresh) {
  std::vector<int> classes;
  std::int64_t total = 0, matched = 0;
  for (const auto& im : gts)
    for (const auto& g : im) {
      if (std::find(classes.begin(), classes.end(), g.class_id) == classes.end()) classes.push_back(g.class_id);
      ++total;
    }
  double sum = 0;
  for (int c : classes) {
    struct D {
      double score;
      std::size_t img;
      mtpn::Box box;
    };
    std::vector<D> ds;
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (const auto& d : preds[i])
        if (d.class_id == c) ds.push_back({d.score, i, d.box});
    std::sort(ds.begin(), ds.end(), [](const D& a, const D& b) { return a.score > b.score; });
    std::int64_t n_gt = 0;
    for (const auto& im : gts)
      for (const auto& g : im) n_gt += g.class_id == c;
    std::vector<std::vector<bool>> used(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), false);
    std::vector<std::pair<double, bool>> st;
    for (const D& d : ds) {
      double best = thresh;
      int bi = -1;
      for (std::size_t g = 0; g < gts[d.img].size(); ++g) {
        if (gts[d.img][g].class_id != c || used[d.img][g]) continue;
        const double v = oracle::iou(d.box, gts[d.img][g].box);
        if (v >= best && (bi < 0 || v > best)) {
          best = v;
          bi = int(g);
        }
      }
      if (bi >= 0) {
        used[d.img][std::size_t(bi)] = true;
        ++matched;
      }
      st.push_back({d.score, bi >= 0});
    }
    sum += ap_exhaustive(st, n_gt);
  }
  return {classes.empty() ? 0.0 : sum / double(classes.size()), total ? double(matched) / double(total) : 0.0};
}

inline double miou(const mtpn::Mask& p, const mtpn::Mask& g) {
  double sum = 0;
  int n = 0;
  for (int k = 0; k < 2; ++k) {
    std::int64_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < p.data.size(); ++i) {
      const bool a = p.data[i] == k, b = g.data[i] == k;
      inter += a && b;
      uni += a || b;
    }
    if (uni) {
      sum += double(inter) / double(uni);
      ++n;
    }
  }
  return sum / n;
}

}  // namespace oracle
