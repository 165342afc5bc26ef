#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mtpn/config.hpp"
#include "mtpn/ops.hpp"
#include "mtpn/tensor.hpp"

namespace mtpn {

/// Axis-aligned box as (center x, center y, width, height) in input pixels.
struct Box {
  double cx = 0;
  double cy = 0;
  double w = 0;
  double h = 0;

  double x1() const noexcept { return cx - 0.5 * w; }
  double y1() const noexcept { return cy - 0.5 * h; }
  double x2() const noexcept { return cx + 0.5 * w; }
  double y2() const noexcept { return cy + 0.5 * h; }
  double area() const noexcept { return w * h; }

  friend bool operator==(const Box&, const Box&) = default;
};

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

struct Detection {
  int class_id = 0;
  double score = 0;
  Box box;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct GtBox {
  int class_id = 0;
  Box box;

  friend bool operator==(const GtBox&, const GtBox&) = default;
};

/// Raw head outputs. detection[k] has shape (n, 3*(5+C), H/s_k, W/s_k) for
/// strides 8, 16, 32; the segmentation maps are (n, 2, H, W) logits.
template <Element T>
struct RawPredictions {
  std::array<Tensor<T>, 3> detection;
  Tensor<T> drivable;
  Tensor<T> lane;
};

inline constexpr double kLogitClamp = 4.0;

/// Channel of field `field` (0..4 box+objectness, 5.. classes) for anchor a.
inline std::int64_t detection_channel(int num_classes, int anchor, int field) {
  return static_cast<std::int64_t>(anchor) * (5 + num_classes) + field;
}

inline double sigmoid(double v) { return ops::sigmoid(v); }

/// Box decoded from logits (tx, ty, tw, th) at grid cell (row, col).
inline Box decode_box(double tx, double ty, double tw, double th, int row, int col, int stride,
                      const AnchorShape& anchor) {
  return {(sigmoid(tx) + col) * stride, (sigmoid(ty) + row) * stride,
          anchor.w * std::exp(std::clamp(tw, -kLogitClamp, kLogitClamp)),
          anchor.h * std::exp(std::clamp(th, -kLogitClamp, kLogitClamp))};
}

/// Algebraic inverse of decode_box. Center offsets are kept a hair inside
/// (0, 1) so the logit stays finite.
inline std::array<double, 4> encode_box(const Box& box, int row, int col, int stride, const AnchorShape& anchor) {
  constexpr double eps = 1e-9;
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };
  const double fx = std::clamp(box.cx / stride - col, eps, 1.0 - eps);
  const double fy = std::clamp(box.cy / stride - row, eps, 1.0 - eps);
  return {logit(fx), logit(fy), std::log(box.w / anchor.w), std::log(box.h / anchor.h)};
}

/// Decodes every anchor of image `batch_index` whose score reaches conf_thresh.
template <Element T>
std::vector<Detection> decode_detections(const RawPredictions<T>& raw, const ModelConfig& cfg, double conf_thresh,
                                         std::int64_t batch_index = 0) {
  std::vector<Detection> out;
  const int nc = cfg.num_classes;
  for (std::size_t k = 0; k < kDetectionStrides.size(); ++k) {
    const int stride = kDetectionStrides[k];
    const Tensor<T>& map = raw.detection[k];
    const Shape& s = map.shape();
    if (s.c != cfg.detection_channels()) {
      throw ShapeError("decode_detections", "c", "expected " + std::to_string(cfg.detection_channels()) + " channels");
    }
    const auto anchors = cfg.anchors(stride);
    for (int a = 0; a < kAnchorsPerCell; ++a) {
      auto ch = [&](int field) { return map.plane(batch_index, detection_channel(nc, a, field)); };
      const T* tx = ch(0);
      const T* ty = ch(1);
      const T* tw = ch(2);
      const T* th = ch(3);
      const T* to = ch(4);
      for (std::int64_t i = 0; i < s.h; ++i) {
        for (std::int64_t j = 0; j < s.w; ++j) {
          const std::int64_t at = i * s.w + j;
          int best = 0;
          double best_logit = ch(5)[at];
          for (int c = 1; c < nc; ++c) {
            const double v = ch(5 + c)[at];
            if (v > best_logit) {
              best_logit = v;
              best = c;
            }
          }
          const double score = sigmoid(double(to[at])) * sigmoid(best_logit);
          if (score < conf_thresh) continue;
          out.push_back({best, score,
                         decode_box(tx[at], ty[at], tw[at], th[at], int(i), int(j), stride,
                                    anchors[static_cast<std::size_t>(a)])});
        }
      }
    }
  }
  return out;
}

/// Orders detections by descending score, ties by (class_id, cx, cy) ascending.
inline bool detection_rank_less(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  if (a.box.cx != b.box.cx) return a.box.cx < b.box.cx;
  return a.box.cy < b.box.cy;
}

/// Greedy per-class non-maximum suppression. Survivors are returned in rank order.
inline std::vector<Detection> nms(std::vector<Detection> dets, double iou_thresh) {
  std::stable_sort(dets.begin(), dets.end(), detection_rank_less);
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) >= iou_thresh) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

}  // namespace mtpn
