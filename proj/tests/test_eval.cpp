// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"
#include "oracles.hpp"

#include <nvsprompt3d/eval.hpp>

#include <random>

using namespace nvsp;

namespace {

std::vector<std::size_t> range(std::size_t a, std::size_t b) {
  std::vector<std::size_t> v;
  for (auto i = a; i < b; ++i) v.push_back(i);
  return v;
}

} // namespace

TEST(MaskIou, Basics) {
  EXPECT_DOUBLE_EQ(mask_iou(range(0, 10), range(5, 15)), 5.0 / 15.0);
  EXPECT_DOUBLE_EQ(mask_iou(range(0, 10), range(0, 10)), 1.0);
  EXPECT_DOUBLE_EQ(mask_iou(range(0, 3), range(3, 6)), 0.0);
}

TEST(AveragePrecision, PerfectAndDisjoint) {
  const std::vector<GroundTruthInstance> gt{{"a", range(0, 10)}, {"b", range(10, 30)}, {"a", range(40, 45)}};
  std::vector<Prediction> perfect;
  for (std::size_t i = 0; i < gt.size(); ++i) perfect.push_back({static_cast<int>(i), gt[i].indices, gt[i].label, 0.9 - 0.1 * i});
  const ApSummary s = ap_sweep(perfect, gt);
  EXPECT_EQ(s.ap, 1.0);
  EXPECT_EQ(s.ap50, 1.0);
  EXPECT_EQ(s.ap25, 1.0);
  const std::vector<Prediction> disjoint{{0, range(100, 120), "a", 0.9}, {1, range(120, 130), "b", 0.5}};
  const ApSummary z = ap_sweep(disjoint, gt);
  EXPECT_EQ(z.ap, 0.0);
  EXPECT_EQ(z.ap25, 0.0);
  EXPECT_EQ(ap_sweep({}, gt).ap, 0.0);
  EXPECT_NVSP_ERROR(average_precision(perfect, {}, 0.5), ErrorCode::EmptyGroundTruth);
}

TEST(AveragePrecision, ThreeInstanceHandCase) {
  // GT: g0 = [0,10), g1 = [10,20), g2 = [20,30), all class "x".
  const std::vector<GroundTruthInstance> gt{{"x", range(0, 10)}, {"x", range(10, 20)}, {"x", range(20, 30)}};
  // p0 matches g0 exactly, p1 overlaps g1 with IoU 2/3, p2 overlaps g2 with IoU 0.3.
  std::vector<std::size_t> p1 = range(12, 20);
  p1.push_back(50);
  p1.push_back(51); // inter 8, union 12 -> 0.667
  std::vector<std::size_t> p2 = range(20, 26);
  for (std::size_t i = 60; i < 70; ++i) p2.push_back(i); // inter 6, union 20 -> 0.3
  const std::vector<Prediction> preds{{0, range(0, 10), "x", 0.5}, {1, p1, "x", 0.9}, {2, p2, "x", 0.7}};
  // At IoU 0.5: order p1 (TP), p2 (FP), p0 (TP): P = 1, 1/2, 2/3; R = 1/3, 1/3, 2/3.
  EXPECT_NEAR(average_precision(preds, gt, 0.5), 1.0 / 3.0 + (1.0 / 3.0) * (2.0 / 3.0), 1e-15);
  // At IoU 0.25 all three are TP.
  EXPECT_NEAR(average_precision(preds, gt, 0.25), 1.0, 1e-15);
  EXPECT_EQ(average_precision(preds, gt, 0.5), oracle::brute_average_precision(preds, gt, 0.5));
  EXPECT_EQ(average_precision(preds, gt, 0.7), oracle::brute_average_precision(preds, gt, 0.7));
}

TEST(AveragePrecision, MatchesExhaustiveOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const auto [preds, gt] = oracle::random_ap_case(rng, 10);
    for (double t : {0.25, 0.5, 0.65, 0.8, 0.95})
      EXPECT_EQ(average_precision(preds, gt, t), oracle::brute_average_precision(preds, gt, t)) << trial << " " << t;
  }
}

TEST(AveragePrecision, Monotonicity) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    auto [preds, gt] = oracle::random_ap_case(rng, 8);
    double last = -1;
    for (double t : {0.95, 0.8, 0.65, 0.5, 0.35, 0.25, 0.1}) {
      const double ap = average_precision(preds, gt, t);
      EXPECT_GE(ap, 0.0);
      EXPECT_LE(ap, 1.0);
      EXPECT_GE(ap, last) << "trial " << trial << " t " << t;
      last = ap;
    }
    // A correct prediction for a ground-truth instance nobody matched.
    const double before = average_precision(preds, gt, 0.5);
    auto extended = preds;
    const auto &g = gt[rng() % gt.size()];
    extended.push_back({99, g.indices, g.label, oracle::uniform(rng, 0.0, 1.0)});
    bool unmatched = true;
    for (const auto &p : preds) {
      auto a = p.indices, b = g.indices;
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      if (p.label == g.label && mask_iou(a, b) >= 0.5) unmatched = false;
    }
    if (unmatched) EXPECT_GE(average_precision(extended, gt, 0.5), before);
  }
}

TEST(AveragePrecision, SceneMeanAndReport) {
  const ApSummary m = mean_over_scenes({{1.0, 1.0, 1.0}, {0.0, 0.5, 1.0}});
  EXPECT_DOUBLE_EQ(m.ap, 0.5);
  EXPECT_DOUBLE_EQ(m.ap50, 0.75);
  EXPECT_DOUBLE_EQ(m.ap25, 1.0);
  const std::vector<GroundTruthInstance> gt{{"a", range(0, 10)}};
  const json r = metrics_report("s1", {{3, range(0, 10), "a", 0.8}}, gt);
  EXPECT_EQ(r["scene_id"], "s1");
  EXPECT_EQ(r["AP"], 1.0);
  EXPECT_EQ(r["per_instance"][0]["instance_id"], 3);
  EXPECT_EQ(r["per_instance"][0]["best_iou"], 1.0);
}
