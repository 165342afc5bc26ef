#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "mtpn/detection.hpp"
#include "mtpn/mask.hpp"

namespace mtpn {

struct MapResult {
  bool has_ground_truth = false;
  double map = 0;
  double recall = 0;
  std::map<int, double> per_class_ap;  // classes with at least one ground truth
};

/// Area under the precision/recall curve after replacing each precision by
/// the maximum precision at any equal or higher recall.
inline double average_precision(std::span<const std::uint8_t> tp_in_rank_order, std::int64_t num_gt) {
  const std::size_t n = tp_in_rank_order.size();
  std::vector<double> precision(n), recall(n);
  std::int64_t tp = 0;
  for (std::size_t i = 0; i < n; ++i) {
    tp += tp_in_rank_order[i];
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (std::size_t i = n; i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0, prev_recall = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// preds[i] and gts[i] belong to image i. Within each class, detections are
/// visited by descending score and matched to the unmatched ground truth of
/// highest IoU in the same image, if that IoU reaches iou_thresh.
inline MapResult compute_map(std::span<const std::vector<Detection>> preds, std::span<const std::vector<GtBox>> gts,
                             double iou_thresh = 0.5) {
  if (preds.size() != gts.size()) throw ShapeError("compute_map", "images", "prediction and ground-truth counts differ");
  std::map<int, std::int64_t> gt_count;
  std::int64_t total_gt = 0;
  for (const auto& image : gts)
    for (const GtBox& g : image) {
      ++gt_count[g.class_id];
      ++total_gt;
    }
  MapResult out;
  if (total_gt == 0) return out;
  out.has_ground_truth = true;

  struct Ranked {
    std::size_t image;
    const Detection* det;
  };
  std::int64_t matched_total = 0;
  double ap_sum = 0;
  for (const auto& [cls, count] : gt_count) {
    std::vector<Ranked> ranked;
    for (std::size_t i = 0; i < preds.size(); ++i)
      for (const Detection& d : preds[i])
        if (d.class_id == cls) ranked.push_back({i, &d});
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
      if (a.det->score != b.det->score) return a.det->score > b.det->score;
      if (a.image != b.image) return a.image < b.image;
      return detection_rank_less(*a.det, *b.det);
    });

    std::vector<std::vector<std::uint8_t>> used(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) used[i].assign(gts[i].size(), 0);
    std::vector<std::uint8_t> tp(ranked.size(), 0);
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      const auto& image_gts = gts[ranked[r].image];
      double best = -1;
      std::size_t best_g = 0;
      for (std::size_t g = 0; g < image_gts.size(); ++g) {
        if (image_gts[g].class_id != cls || used[ranked[r].image][g]) continue;
        const double v = iou(ranked[r].det->box, image_gts[g].box);
        if (v > best) {
          best = v;
          best_g = g;
        }
      }
      if (best >= iou_thresh) {
        used[ranked[r].image][best_g] = 1;
        tp[r] = 1;
        ++matched_total;
      }
    }
    const double ap = average_precision(tp, count);
    out.per_class_ap[cls] = ap;
    ap_sum += ap;
  }
  out.map = ap_sum / static_cast<double>(gt_count.size());
  out.recall = static_cast<double>(matched_total) / static_cast<double>(total_gt);
  return out;
}

/// Mean IoU over {background, foreground}; a class absent from both masks is skipped.
inline double compute_miou(const Mask& pred, const Mask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("compute_miou", "h/w", "pred " + std::to_string(pred.h) + "x" + std::to_string(pred.w) + " vs gt " +
                                                std::to_string(gt.h) + "x" + std::to_string(gt.w));
  pred.check_binary("compute_miou");
  gt.check_binary("compute_miou");
  std::int64_t inter[2] = {0, 0}, uni[2] = {0, 0};
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const int p = pred.data[i], g = gt.data[i];
    if (p == g) {
      ++inter[p];
      ++uni[p];
    } else {
      ++uni[p];
      ++uni[g];
    }
  }
  double sum = 0;
  int classes = 0;
  for (int k = 0; k < 2; ++k) {
    if (uni[k] == 0) continue;
    sum += static_cast<double>(inter[k]) / static_cast<double>(uni[k]);
    ++classes;
  }
  return classes ? sum / classes : 1.0;
}

}  // namespace mtpn
