// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/scene_io.hpp>

#include <algorithm>
#include <numeric>
#include <set>
#include <string>
#include <vector>

namespace nvsp {

struct Prediction {
  int instance_id = 0;
  std::vector<std::size_t> indices; // sorted point indices
  std::string label;
  double confidence = 0.0;
};

/// Point-set IoU of two sorted index lists.
inline double mask_iou(const std::vector<std::size_t> &a, const std::vector<std::size_t> &b) {
  std::size_t i = 0, j = 0, inter = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] == b[j]) {
      ++inter;
      ++i;
      ++j;
    } else if (a[i] < b[j]) {
      ++i;
    } else {
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Area under the precision envelope (all-point interpolation) of one
/// ordered TP/FP sequence against `total_gt` positives.
inline double area_under_pr(const std::vector<bool> &is_tp, std::size_t total_gt) {
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i] ? 1 : 0;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

/// Class-averaged AP at one IoU threshold. Within each ground-truth class,
/// predictions are taken by descending confidence (ties by position) and
/// each is matched to the unmatched ground truth of its class with the
/// highest IoU >= threshold. Classes absent from the ground truth are ignored.
inline double average_precision(const std::vector<Prediction> &predictions,
                                const std::vector<GroundTruthInstance> &ground_truth, double iou_threshold) {
  if (ground_truth.empty()) fail(ErrorCode::EmptyGroundTruth, "average_precision: no ground-truth instances");
  std::set<std::string> classes;
  for (const auto &g : ground_truth) classes.insert(g.label);

  double sum = 0.0;
  for (const auto &cls : classes) {
    std::vector<std::vector<std::size_t>> gts;
    for (const auto &g : ground_truth) {
      if (g.label != cls) continue;
      auto idx = g.indices;
      std::sort(idx.begin(), idx.end());
      gts.push_back(std::move(idx));
    }
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < predictions.size(); ++i)
      if (predictions[i].label == cls) order.push_back(i);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return predictions[a].confidence > predictions[b].confidence;
    });

    std::vector<bool> matched(gts.size(), false), is_tp;
    for (auto pi : order) {
      auto idx = predictions[pi].indices;
      std::sort(idx.begin(), idx.end());
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gts.size(); ++g) {
        if (matched[g]) continue;
        const double iou = mask_iou(idx, gts[g]);
        if (iou >= iou_threshold && iou > best_iou) {
          best = static_cast<int>(g);
          best_iou = iou;
        }
      }
      if (best >= 0) matched[best] = true;
      is_tp.push_back(best >= 0);
    }
    sum += area_under_pr(is_tp, gts.size());
  }
  return sum / static_cast<double>(classes.size());
}

struct ApSummary {
  double ap = 0.0;   // mean over IoU 0.50:0.05:0.95
  double ap50 = 0.0;
  double ap25 = 0.0;
};

inline ApSummary ap_sweep(const std::vector<Prediction> &predictions,
                          const std::vector<GroundTruthInstance> &ground_truth) {
  ApSummary s;
  for (int i = 0; i < 10; ++i) s.ap += average_precision(predictions, ground_truth, 0.5 + 0.05 * i);
  s.ap /= 10.0;
  s.ap50 = average_precision(predictions, ground_truth, 0.5);
  s.ap25 = average_precision(predictions, ground_truth, 0.25);
  return s;
}

/// Scene-level mean of per-scene summaries.
inline ApSummary mean_over_scenes(const std::vector<ApSummary> &scenes) {
  ApSummary m;
  if (scenes.empty()) return m;
  for (const auto &s : scenes) {
    m.ap += s.ap;
    m.ap50 += s.ap50;
    m.ap25 += s.ap25;
  }
  const double n = static_cast<double>(scenes.size());
  m.ap /= n;
  m.ap50 /= n;
  m.ap25 /= n;
  return m;
}

inline json metrics_report(const std::string &scene_id, const std::vector<Prediction> &predictions,
                           const std::vector<GroundTruthInstance> &ground_truth) {
  const ApSummary s = ap_sweep(predictions, ground_truth);
  json per = json::array();
  for (const auto &p : predictions) {
    auto idx = p.indices;
    std::sort(idx.begin(), idx.end());
    double best_iou = 0.0;
    std::string gt_label;
    for (const auto &g : ground_truth) {
      auto gi = g.indices;
      std::sort(gi.begin(), gi.end());
      const double iou = mask_iou(idx, gi);
      if (iou > best_iou) {
        best_iou = iou;
        gt_label = g.label;
      }
    }
    per.push_back(json{{"instance_id", p.instance_id},
                       {"label", p.label},
                       {"confidence", p.confidence},
                       {"best_iou", best_iou},
                       {"gt_label", gt_label}});
  }
  return json{{"scene_id", scene_id}, {"AP", s.ap}, {"AP50", s.ap50}, {"AP25", s.ap25}, {"per_instance", per}};
}

} // namespace nvsp
