#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "mtpn/architecture.hpp"
#include "mtpn/autograd.hpp"
#include "mtpn/config.hpp"
#include "mtpn/detection.hpp"
#include "mtpn/mask.hpp"

namespace mtpn {

/// Balance between the detection and segmentation objectives.
struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;

  void validate() const {
    if (!(alpha >= 0) || !std::isfinite(alpha)) throw ConfigError("loss.alpha", "must be finite and >= 0");
    if (!(beta >= 0) || !std::isfinite(beta)) throw ConfigError("loss.beta", "must be finite and >= 0");
    if (alpha == 0 && beta == 0) throw ConfigError("loss", "alpha and beta cannot both be 0");
  }
};

/// Multipliers of the three detection terms.
struct DetTermWeights {
  double objectness = 1.0;
  double classification = 1.0;
  double box = 1.0;
  // Weight of positive anchor-cells inside the objectness mean; 1 is the plain mean.
  double objectness_positive = 1.0;
};

struct LossConfig {
  LossWeights weights;
  DetTermWeights terms;
  // Weight of foreground lane pixels in the lane cross-entropy; 1 is unweighted.
  double lane_foreground_weight = 1.0;

  void validate() const {
    weights.validate();
    auto nonneg = [](double v, const char* f) {
      if (!(v >= 0) || !std::isfinite(v)) throw ConfigError(f, "must be finite and >= 0");
    };
    nonneg(terms.objectness, "loss.objectness");
    nonneg(terms.classification, "loss.classification");
    nonneg(terms.box, "loss.box");
    if (!(terms.objectness_positive > 0) || !std::isfinite(terms.objectness_positive))
      throw ConfigError("loss.objectness_positive_weight", "must be finite and > 0");
    if (!(lane_foreground_weight > 0) || !std::isfinite(lane_foreground_weight))
      throw ConfigError("loss.lane_foreground_weight", "must be finite and > 0");
  }
};

struct LossBreakdown {
  double l_det = 0;
  double l_seg = 0;
  double alpha = 1;
  double beta = 1;
  double l_total = 0;
  std::array<double, 3> det_components{};  // objectness, classification, box
};

inline LossBreakdown total_loss(double l_det, double l_seg, const LossWeights& w,
                                std::array<double, 3> det_components = {}) {
  LossBreakdown out;
  out.l_det = l_det;
  out.l_seg = l_seg;
  out.alpha = w.alpha;
  out.beta = w.beta;
  out.l_total = w.alpha * l_det + w.beta * l_seg;
  out.det_components = det_components;
  return out;
}

// ---------------------------------------------------------------------------
// Target assignment

struct ScaleTargets {
  int stride = 8;
  std::int64_t h = 0;
  std::int64_t w = 0;
  std::array<AnchorShape, 3> anchors{};
  std::vector<std::uint8_t> positive;          // indexed by slot(a, i, j)
  std::vector<std::array<double, 4>> box;      // encoded (tx, ty, tw, th)
  std::vector<int> class_id;                   // -1 on negatives
  std::vector<int> gt_index;                   // -1 on negatives

  std::size_t slot(int a, std::int64_t i, std::int64_t j) const {
    return static_cast<std::size_t>((a * h + i) * w + j);
  }
  double objectness(std::size_t s) const { return positive[s]; }
  double class_target(std::size_t s, int k) const { return class_id[s] == k ? 1.0 : 0.0; }
};

struct TargetAssignment {
  std::array<ScaleTargets, 3> scales;
  std::vector<GtBox> gts;
  int num_classes = 0;

  std::int64_t positives() const {
    std::int64_t p = 0;
    for (const auto& s : scales)
      for (auto v : s.positive) p += v;
    return p;
  }
};

/// IoU of two boxes of the given sizes sharing a center.
inline double shape_iou(double w1, double h1, double w2, double h2) {
  const double inter = std::min(w1, w2) * std::min(h1, h2);
  return inter / (w1 * h1 + w2 * h2 - inter);
}

/// Each box in input order takes the free (scale, anchor) slot of best anchor
/// shape IoU at the cell holding its center; ties go to the smaller stride,
/// then the lower anchor index.
inline TargetAssignment assign_targets(std::span<const GtBox> gts, const ModelConfig& cfg, std::int64_t image_h,
                                       std::int64_t image_w) {
  TargetAssignment t;
  t.num_classes = cfg.num_classes;
  t.gts.assign(gts.begin(), gts.end());
  for (std::size_t k = 0; k < 3; ++k) {
    ScaleTargets& s = t.scales[k];
    s.stride = kDetectionStrides[k];
    s.h = image_h / s.stride;
    s.w = image_w / s.stride;
    s.anchors = cfg.anchors(s.stride);
    const auto n = static_cast<std::size_t>(kAnchorsPerCell * s.h * s.w);
    s.positive.assign(n, 0);
    s.box.assign(n, {0, 0, 0, 0});
    s.class_id.assign(n, -1);
    s.gt_index.assign(n, -1);
  }

  constexpr double tol = 1e-9;
  for (std::size_t g = 0; g < gts.size(); ++g) {
    const Box& b = gts[g].box;
    if (!(b.w > 0) || !(b.h > 0) || !std::isfinite(b.w) || !std::isfinite(b.h))
      throw ValueError("assign_targets: box " + std::to_string(g) + " has non-positive width or height");
    if (b.x1() < -tol || b.y1() < -tol || b.x2() > image_w + tol || b.y2() > image_h + tol)
      throw ValueError("assign_targets: box " + std::to_string(g) + " lies outside the image");
    if (gts[g].class_id < 0 || gts[g].class_id >= cfg.num_classes)
      throw ValueError("assign_targets: box " + std::to_string(g) + " has class id " +
                       std::to_string(gts[g].class_id) + " outside [0, num_classes)");

    struct Candidate {
      double iou;
      int scale;
      int anchor;
    };
    std::vector<Candidate> cands;
    for (int k = 0; k < 3; ++k) {
      const auto anchors = cfg.anchors(kDetectionStrides[static_cast<std::size_t>(k)]);
      for (int a = 0; a < kAnchorsPerCell; ++a)
        cands.push_back({shape_iou(b.w, b.h, anchors[std::size_t(a)].w, anchors[std::size_t(a)].h), k, a});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& x, const Candidate& y) {
      if (x.iou != y.iou) return x.iou > y.iou;
      if (x.scale != y.scale) return x.scale < y.scale;
      return x.anchor < y.anchor;
    });

    bool placed = false;
    for (const Candidate& c : cands) {
      ScaleTargets& s = t.scales[std::size_t(c.scale)];
      const auto i = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(b.cy / s.stride)), s.h - 1);
      const auto j = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(b.cx / s.stride)), s.w - 1);
      const std::size_t at = s.slot(c.anchor, i, j);
      if (s.positive[at]) continue;
      s.positive[at] = 1;
      s.class_id[at] = gts[g].class_id;
      s.gt_index[at] = static_cast<int>(g);
      s.box[at] = encode_box(b, int(i), int(j), s.stride, s.anchors[std::size_t(c.anchor)]);
      placed = true;
      break;
    }
    if (!placed) throw ValueError("assign_targets: no free anchor slot for box " + std::to_string(g));
  }
  return t;
}

inline TargetAssignment assign_targets(std::span<const GtBox> gts, const ModelConfig& cfg) {
  return assign_targets(gts, cfg, cfg.input_h, cfg.input_w);
}

// ---------------------------------------------------------------------------
// Loss terms

namespace detail {
/// Binary cross-entropy on a logit, in the overflow-safe form.
inline double bce_logits(double z, double target) {
  return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
}
}  // namespace detail

/// IoU of p against g and its gradient with respect to (cx, cy, w, h) of p.
inline double iou_with_grad(const Box& p, const Box& g, std::array<double, 4>& grad) {
  grad = {0, 0, 0, 0};
  const double iw = std::min(p.x2(), g.x2()) - std::max(p.x1(), g.x1());
  const double ih = std::min(p.y2(), g.y2()) - std::max(p.y1(), g.y1());
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = p.area() + g.area() - inter;
  const double iou = inter / uni;

  // d(iw)/d(x2), d(iw)/d(x1) of the predicted box
  const double dx2 = p.x2() < g.x2() ? 1.0 : 0.0;
  const double dx1 = p.x1() > g.x1() ? -1.0 : 0.0;
  const double dy2 = p.y2() < g.y2() ? 1.0 : 0.0;
  const double dy1 = p.y1() > g.y1() ? -1.0 : 0.0;
  const double d_inter[4] = {ih * (dx2 + dx1), iw * (dy2 + dy1), ih * 0.5 * (dx2 - dx1), iw * 0.5 * (dy2 - dy1)};
  const double d_area[4] = {0, 0, p.h, p.w};
  const double u2 = uni * uni;
  for (int q = 0; q < 4; ++q) grad[std::size_t(q)] = d_inter[q] * (uni + inter) / u2 - inter * d_area[q] / u2;
  return iou;
}

template <Element T>
struct DetectionLoss {
  double objectness = 0;
  double classification = 0;
  double box = 0;
  double l_det = 0;
  std::array<Tensor<T>, 3> grad;  // d l_det / d maps

  std::array<double, 3> components() const { return {objectness, classification, box}; }
};

/// Objectness BCE averaged over every anchor-cell (positives weighted by
/// terms.objectness_positive), class BCE averaged over
/// positives x classes, (1 - IoU) averaged over positives. targets[b] belongs
/// to image b of the batch. Inside the clamp range grad is the exact
/// derivative; outside it the width/height logits see a straight-through gradient.
template <Element T>
DetectionLoss<T> detection_loss(const std::array<Tensor<T>, 3>& maps, std::span<const TargetAssignment> targets,
                                const DetTermWeights& terms = {}) {
  if (targets.empty()) throw ShapeError("detection_loss", "n", "no targets given");
  const int nc = targets[0].num_classes;
  const std::int64_t batch = maps[0].shape().n;
  if (static_cast<std::int64_t>(targets.size()) != batch)
    throw ShapeError("detection_loss", "n", "batch of " + std::to_string(batch) + " maps vs " +
                                                std::to_string(targets.size()) + " target sets");

  std::int64_t cells = 0;
  std::int64_t positives = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const Shape& s = maps[k].shape();
    if (s.n != batch) throw ShapeError("detection_loss", "n", "scale maps disagree on batch size");
    if (s.c != kAnchorsPerCell * (5 + nc))
      throw ShapeError("detection_loss", "c", "expected " + std::to_string(kAnchorsPerCell * (5 + nc)) + " channels");
    for (const TargetAssignment& t : targets) {
      if (t.num_classes != nc) throw ShapeError("detection_loss", "classes", "targets disagree on class count");
      if (t.scales[k].h != s.h || t.scales[k].w != s.w)
        throw ShapeError("detection_loss", "h/w", "target grid " + std::to_string(t.scales[k].h) + "x" +
                                                      std::to_string(t.scales[k].w) + " vs map " + s.str());
    }
    cells += batch * kAnchorsPerCell * s.h * s.w;
  }
  for (const TargetAssignment& t : targets) positives += t.positives();

  DetectionLoss<T> out;
  for (std::size_t k = 0; k < 3; ++k) out.grad[k] = Tensor<T>(maps[k].shape());

  const double wpos = terms.objectness_positive;
  const double obj_norm = static_cast<double>(cells - positives) + wpos * static_cast<double>(positives);
  const double obj_scale = terms.objectness / obj_norm;
  const double cls_scale = positives ? terms.classification / static_cast<double>(positives * nc) : 0.0;
  const double box_scale = positives ? terms.box / static_cast<double>(positives) : 0.0;
  double obj_sum = 0, cls_sum = 0, box_sum = 0;

  for (std::int64_t b = 0; b < batch; ++b) {
    const TargetAssignment& tgt = targets[static_cast<std::size_t>(b)];
    for (std::size_t k = 0; k < 3; ++k) {
      const ScaleTargets& st = tgt.scales[k];
      const Tensor<T>& map = maps[k];
      Tensor<T>& grad = out.grad[k];
      const std::int64_t hw = st.h * st.w;
      for (int a = 0; a < kAnchorsPerCell; ++a) {
        auto in = [&](int field) { return map.plane(b, detection_channel(nc, a, field)); };
        auto gr = [&](int field) { return grad.plane(b, detection_channel(nc, a, field)); };
        for (std::int64_t at = 0; at < hw; ++at) {
          const std::size_t s = st.slot(a, at / st.w, at % st.w);
          const double z = in(4)[at];
          const double t = st.objectness(s);
          const double wi = st.positive[s] ? wpos : 1.0;
          obj_sum += wi * detail::bce_logits(z, t);
          gr(4)[at] = static_cast<T>(obj_scale * wi * (ops::sigmoid(z) - t));
          if (!st.positive[s]) continue;

          for (int c = 0; c < nc; ++c) {
            const double zc = in(5 + c)[at];
            const double tc = st.class_target(s, c);
            cls_sum += detail::bce_logits(zc, tc);
            gr(5 + c)[at] = static_cast<T>(cls_scale * (ops::sigmoid(zc) - tc));
          }

          const double tx = in(0)[at], ty = in(1)[at], tw = in(2)[at], th = in(3)[at];
          const Box& gt = tgt.gts[static_cast<std::size_t>(st.gt_index[s])].box;
          const int i = int(at / st.w), j = int(at % st.w);
          const Box pred = decode_box(tx, ty, tw, th, i, j, st.stride, st.anchors[std::size_t(a)]);
          std::array<double, 4> d{};
          const double v = iou_with_grad(pred, gt, d);
          box_sum += 1.0 - v;
          const double sx = ops::sigmoid(tx), sy = ops::sigmoid(ty);
          const double dtx = d[0] * st.stride * sx * (1 - sx);
          const double dty = d[1] * st.stride * sy * (1 - sy);
          // The clamp is bypassed on the way back: a logit stranded outside
          // [-4, 4] still gets pulled toward the target instead of a zero gradient.
          const double dtw = d[2] * pred.w;
          const double dth = d[3] * pred.h;
          gr(0)[at] = static_cast<T>(-box_scale * dtx);
          gr(1)[at] = static_cast<T>(-box_scale * dty);
          gr(2)[at] = static_cast<T>(-box_scale * dtw);
          gr(3)[at] = static_cast<T>(-box_scale * dth);
        }
      }
    }
  }

  out.objectness = terms.objectness * obj_sum / obj_norm;
  out.classification = positives ? terms.classification * cls_sum / static_cast<double>(positives * nc) : 0.0;
  out.box = positives ? terms.box * box_sum / static_cast<double>(positives) : 0.0;
  out.l_det = out.objectness + out.classification + out.box;
  return out;
}

template <Element T>
DetectionLoss<T> detection_loss(const std::array<Tensor<T>, 3>& maps, const TargetAssignment& targets,
                                const DetTermWeights& terms = {}) {
  return detection_loss(maps, std::span<const TargetAssignment>(&targets, 1), terms);
}

template <Element T>
struct SegmentationLoss {
  double drivable = 0;
  double lane = 0;
  double l_seg = 0;
  Tensor<T> grad_drivable;
  Tensor<T> grad_lane;
};

namespace detail {
/// Weighted mean two-class cross-entropy of one head; writes scale * dCE/dlogits.
template <Element T>
double head_cross_entropy(const Tensor<T>& logits, std::span<const Mask> gt, double fg_weight, double scale,
                          Tensor<T>& grad, const char* head) {
  const Shape& s = logits.shape();
  if (s.c != kSegClasses) throw ShapeError("segmentation_loss", "c", std::string(head) + " map needs 2 channels");
  if (static_cast<std::int64_t>(gt.size()) != s.n)
    throw ShapeError("segmentation_loss", "n", std::string(head) + " map batch vs mask count");
  double wsum = 0;
  for (const Mask& m : gt) {
    m.check_binary("segmentation_loss");
    if (m.h != s.h || m.w != s.w)
      throw ShapeError("segmentation_loss", "h/w", std::string(head) + " mask does not match map " + s.str());
    const double fg = static_cast<double>(m.count());
    wsum += fg * fg_weight + (static_cast<double>(m.size()) - fg);
  }
  grad = Tensor<T>(s);
  double total = 0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    const Mask& m = gt[static_cast<std::size_t>(n)];
    const T* z0 = logits.plane(n, 0);
    const T* z1 = logits.plane(n, 1);
    T* g0 = grad.plane(n, 0);
    T* g1 = grad.plane(n, 1);
    for (std::int64_t i = 0; i < s.plane(); ++i) {
      const int y = m.data[static_cast<std::size_t>(i)];
      const double a = z0[i], b = z1[i];
      const double hi = std::max(a, b);
      const double lse = hi + std::log(std::exp(a - hi) + std::exp(b - hi));
      const double wi = y ? fg_weight : 1.0;
      total += wi * (lse - (y ? b : a));
      const double p1 = std::exp(b - lse);
      const double p0 = std::exp(a - lse);
      g0[i] = static_cast<T>(scale * wi / wsum * (p0 - (y == 0)));
      g1[i] = static_cast<T>(scale * wi / wsum * (p1 - (y == 1)));
    }
  }
  return total / wsum;
}
}  // namespace detail

/// l_seg = (CE_drivable + CE_lane) / 2, each a mean over pixels.
template <Element T>
SegmentationLoss<T> segmentation_loss(const Tensor<T>& drivable, const Tensor<T>& lane,
                                      std::span<const Mask> drivable_gt, std::span<const Mask> lane_gt,
                                      double lane_foreground_weight = 1.0) {
  SegmentationLoss<T> out;
  out.drivable = detail::head_cross_entropy(drivable, drivable_gt, 1.0, 0.5, out.grad_drivable, "drivable");
  out.lane = detail::head_cross_entropy(lane, lane_gt, lane_foreground_weight, 0.5, out.grad_lane, "lane");
  out.l_seg = 0.5 * (out.drivable + out.lane);
  return out;
}

template <Element T>
SegmentationLoss<T> segmentation_loss(const Tensor<T>& drivable, const Tensor<T>& lane, const Mask& drivable_gt,
                                      const Mask& lane_gt, double lane_foreground_weight = 1.0) {
  return segmentation_loss(drivable, lane, std::span<const Mask>(&drivable_gt, 1), std::span<const Mask>(&lane_gt, 1),
                           lane_foreground_weight);
}

/// Full objective on raw outputs, without gradients.
template <Element T>
LossBreakdown evaluate_loss(const RawPredictions<T>& raw, std::span<const TargetAssignment> targets,
                            std::span<const Mask> drivable_gt, std::span<const Mask> lane_gt, const LossConfig& cfg) {
  const auto det = detection_loss(raw.detection, targets, cfg.terms);
  const auto seg = segmentation_loss(raw.drivable, raw.lane, drivable_gt, lane_gt, cfg.lane_foreground_weight);
  return total_loss(det.l_det, seg.l_seg, cfg.weights, det.components());
}

struct MultiTaskLoss {
  ag::Var<float> node;  // scalar l_total; backward seeds every head output
  LossBreakdown breakdown;
};

/// Wraps the objective as a graph node over the five head outputs so one
/// backward call reaches every parameter. Head gradients are scaled by
/// alpha (detection) and beta (segmentation).
inline MultiTaskLoss multitask_loss(const HeadsOf<ag::Var<float>>& heads, std::span<const TargetAssignment> targets,
                                    std::span<const Mask> drivable_gt, std::span<const Mask> lane_gt,
                                    const LossConfig& cfg) {
  const std::array<Tensor<float>, 3> maps{heads.detection[0].value(), heads.detection[1].value(),
                                          heads.detection[2].value()};
  auto det = std::make_shared<DetectionLoss<float>>(detection_loss(maps, targets, cfg.terms));
  auto seg = std::make_shared<SegmentationLoss<float>>(
      segmentation_loss(heads.drivable.value(), heads.lane.value(), drivable_gt, lane_gt, cfg.lane_foreground_weight));
  MultiTaskLoss out;
  out.breakdown = total_loss(det->l_det, seg->l_seg, cfg.weights, det->components());
  const auto alpha = static_cast<float>(cfg.weights.alpha);
  const auto beta = static_cast<float>(cfg.weights.beta);

  Tensor<float> value(Shape{1, 1, 1, 1}, static_cast<float>(out.breakdown.l_total));
  out.node = ag::make_op(std::move(value),
                         {heads.detection[0], heads.detection[1], heads.detection[2], heads.drivable, heads.lane},
                         [det, seg, alpha, beta](ag::Node<float>& self) {
                           const float up = (*self.grad)[0];
                           auto scaled = [up](const Tensor<float>& g, float w) {
                             Tensor<float> t = g;
                             for (float& v : t.data()) v *= w * up;
                             return t;
                           };
                           for (std::size_t k = 0; k < 3; ++k)
                             self.parents[k]->accumulate(scaled(det->grad[k], alpha));
                           self.parents[3]->accumulate(scaled(seg->grad_drivable, beta));
                           self.parents[4]->accumulate(scaled(seg->grad_lane, beta));
                         });
  return out;
}

}  // namespace mtpn
