// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"
#include "oracles.hpp"

#include <nvsprompt3d/geometry.hpp>
#include <nvsprompt3d/synthetic.hpp>

#include <algorithm>
#include <numeric>
#include <random>

using namespace nvsp;

namespace {

Intrinsics intrinsics(double f, double cx, double cy, int w, int h) { return Intrinsics{f, f, cx, cy, w, h}; }

} // namespace

TEST(Projection, PrincipalRay) {
  const auto p = project_point(Vec3(0, 0, 2), CameraPose{}, intrinsics(1, 0, 0, 1, 1), nullptr, 0.4);
  EXPECT_EQ(p.u, 0.0);
  EXPECT_EQ(p.v, 0.0);
  EXPECT_EQ(p.z, 2.0);
  EXPECT_TRUE(p.visible);
}

TEST(Projection, ManualPinhole) {
  Intrinsics k{100, 100, 50, 50, 200, 100};
  const auto p = project_point(Vec3(1, 0, 2), CameraPose{}, k, nullptr, 0.4);
  EXPECT_DOUBLE_EQ(p.u, 100.0);
  EXPECT_DOUBLE_EQ(p.v, 50.0);
}

TEST(Projection, BehindCameraInvisible) {
  DepthMap d;
  d.width = d.height = 10;
  d.values.assign(100, 1.0f);
  const auto pts = project_points(std::vector<Vec3>{Vec3(0, 0, -1)}, CameraPose{}, intrinsics(10, 5, 5, 10, 10), d, 0.4);
  EXPECT_FALSE(pts[0].visible);
}

TEST(Projection, NearestPixelRule) {
  EXPECT_EQ(nearest_pixel(10.4, 100), 10);
  EXPECT_EQ(nearest_pixel(10.5, 100), 11);
  EXPECT_EQ(nearest_pixel(20.6, 100), 21);
  EXPECT_EQ(nearest_pixel(99.7, 100), 99);
  EXPECT_EQ(nearest_pixel(0.0, 100), 0);
}

TEST(Visibility, AllVisibleAndOccluded) {
  const Intrinsics k = intrinsics(50, 32, 32, 64, 64);
  PointCloud cloud;
  for (int i = 0; i < 10; ++i) {
    cloud.positions.push_back(Vec3(0.05 * (i - 5), 0.03 * i, 2.0));
    cloud.colors.push_back(Vec3::Zero());
  }
  DepthMap exact;
  exact.width = exact.height = 64;
  exact.values.assign(64 * 64, 2.0f);
  const auto mask = InstanceMask::from_indices(0, 10, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_EQ(visibility_score(mask, cloud, CameraPose{}, k, exact, 0.4).score, 10u);
  DepthMap closer = exact;
  std::fill(closer.values.begin(), closer.values.end(), static_cast<float>(2.0 - 2 * 0.4));
  EXPECT_EQ(visibility_score(mask, cloud, CameraPose{}, k, closer, 0.4).score, 0u);
}

TEST(Visibility, Errors) {
  PointCloud cloud;
  cloud.positions.assign(3, Vec3(0, 0, 1));
  cloud.colors.assign(3, Vec3::Zero());
  DepthMap d;
  d.width = d.height = 4;
  d.values.assign(16, 1.0f);
  InstanceMask m;
  m.bits.assign(4, 1);
  EXPECT_NVSP_ERROR(visibility_score(m, cloud, CameraPose{}, intrinsics(2, 2, 2, 4, 4), d, 0.4),
                    ErrorCode::DimensionMismatch);
  m.bits.assign(3, 0);
  EXPECT_NVSP_ERROR(visibility_score(m, cloud, CameraPose{}, intrinsics(2, 2, 2, 4, 4), d, 0.4), ErrorCode::EmptyMask);
  EXPECT_NVSP_ERROR(InstanceMask::from_indices(0, 99, {99}), ErrorCode::DimensionMismatch);
}

TEST(Visibility, MatchesBruteForceOracle) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = oracle::random_visibility_case(rng, 50);
    EXPECT_EQ(visibility_score(c.mask, c.cloud, c.pose, c.intr, c.depth, c.delta).score, oracle::brute_visibility(c))
        << "trial " << trial;
  }
}

TEST(TopK, Examples) {
  EXPECT_EQ(select_top_k({{0, 5}, {1, 9}, {2, 7}}, 2), (std::vector<int>{1, 2}));
  EXPECT_EQ(select_top_k({{0, 5}, {1, 5}}, 1), (std::vector<int>{0}));
  EXPECT_EQ(select_top_k({{4, 5}, {3, 0}}, 3), (std::vector<int>{4}));
  EXPECT_NVSP_ERROR(select_top_k({{0, 0}, {1, 0}}, 2), ErrorCode::NoVisiblePose);
}

TEST(TopK, MatchesSortOracleAndIsPermutationInvariant) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<VisibilityScore> scores;
    for (int i = 0; i < 20; ++i) scores.push_back({i * 3 + 1, static_cast<std::size_t>(1 + rng() % 6)});
    auto sorted = scores;
    std::stable_sort(sorted.begin(), sorted.end(), [](auto &a, auto &b) { return a.score > b.score; });
    std::vector<int> expect;
    for (int i = 0; i < 6; ++i) expect.push_back(sorted[i].pose_id);
    EXPECT_EQ(select_top_k(scores, 6), expect);
    std::shuffle(scores.begin(), scores.end(), rng);
    EXPECT_EQ(select_top_k(scores, 6), expect);
  }
}

TEST(GeometricMedian, SmallCases) {
  const std::vector<Vec3> one{Vec3(1, 2, 3)};
  EXPECT_EQ(geometric_median(one), Vec3(1, 2, 3));
  const std::vector<Vec3> square{Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(1, 1, 0)};
  EXPECT_LT((geometric_median(square) - Vec3(0.5, 0.5, 0)).norm(), 1e-9);
  const std::vector<Vec3> same(5, Vec3(-1, 4, 2));
  EXPECT_EQ(geometric_median(same), Vec3(-1, 4, 2));
  EXPECT_NVSP_ERROR(geometric_median(std::vector<Vec3>{}), ErrorCode::EmptyInput);
}

TEST(GeometricMedian, TriangleMatchesGridOracle) {
  const std::vector<Vec3> tri{Vec3(0, 0, 0), Vec3(4, 0, 0), Vec3(0, 3, 0)};
  const Vec3 expect = oracle::grid_median(tri, 1e-4);
  EXPECT_LT((geometric_median(tri) - expect).norm(), 1e-3);
}

TEST(GeometricMedian, ObjectiveNonIncreasing) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Vec3> pts;
    for (int i = 0; i < 40; ++i) pts.push_back(Vec3(n(rng), 2 * n(rng), 0.5 * n(rng)));
    std::vector<double> f;
    const Vec3 m = geometric_median(pts, 1000, 1e-5, [&](const Vec3 &x) { f.push_back(distance_sum(pts, x)); });
    ASSERT_GE(f.size(), 1u);
    for (std::size_t i = 1; i < f.size(); ++i) EXPECT_LE(f[i], f[i - 1] + 1e-12);
    EXPECT_LE(distance_sum(pts, m), f.front());
  }
}

TEST(GeometricMedian, RigidEquivariance) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<Vec3> pts;
  for (int i = 0; i < 60; ++i) pts.push_back(Vec3(n(rng), n(rng), n(rng)));
  const Mat3 R = Eigen::AngleAxisd(0.7, Vec3(1, 2, -1).normalized()).toRotationMatrix();
  const Vec3 t(3, -2, 5);
  std::vector<Vec3> moved;
  for (const auto &p : pts) moved.push_back(R * p + t);
  const double sigma = oracle::mean_axis_sigma(pts);
  EXPECT_LT((geometric_median(moved) - (R * geometric_median(pts) + t)).norm(), 1e-6 * sigma);
}

TEST(LookAt, HandExample) {
  const Mat3 c2w = look_at_rotation(Vec3::Zero(), Vec3(0, 1, 0), Vec3(0, 0, 1));
  EXPECT_LT((c2w.col(0) - Vec3(1, 0, 0)).norm(), 1e-15);
  EXPECT_LT((c2w.col(1) - Vec3(0, 1, 0)).norm(), 1e-15);
  EXPECT_LT((c2w.col(2) - Vec3(0, 0, 1)).norm(), 1e-15);
  EXPECT_NEAR(c2w.determinant(), 1.0, 1e-12);
}

TEST(LookAt, Errors) {
  EXPECT_NVSP_ERROR(look_at_rotation(Vec3::Zero(), Vec3(0, 0, 1), Vec3(0, 0, 5)), ErrorCode::DegenerateUp);
  EXPECT_NVSP_ERROR(look_at_rotation(Vec3::Zero(), Vec3(0, 0, 1), Vec3(0, 0, -5)), ErrorCode::DegenerateUp);
  EXPECT_NVSP_ERROR(look_at_rotation(Vec3(1, 1, 1), Vec3(0, 1, 0), Vec3(1, 1, 1)), ErrorCode::CoincidentTarget);
}

TEST(LookAt, RandomPosesAimAtTarget) {
  std::mt19937_64 rng(99);
  const Intrinsics k = intrinsics(500, 320, 240, 640, 480);
  int done = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const CameraPose pose = oracle::random_pose(rng, trial);
    const Vec3 target = oracle::random_vec(rng, 5.0);
    CameraPose adjusted;
    try {
      adjusted = look_at(pose, target);
    } catch (const Error &e) {
      EXPECT_TRUE(e.code() == ErrorCode::DegenerateUp || e.code() == ErrorCode::CoincidentTarget);
      continue;
    }
    ++done;
    const Mat3 &R = adjusted.rotation;
    EXPECT_LT((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-9);
    const auto p = project_point(target, adjusted, k, nullptr, 1.0);
    EXPECT_LT(std::hypot(p.u - k.cx, p.v - k.cy), 0.5);
    EXPECT_GT(p.z, 0.0);
    EXPECT_LT((adjusted.center() - pose.center()).norm(), 1e-9);
    // Idempotence.
    EXPECT_LT((look_at(adjusted, target).rotation - R).cwiseAbs().maxCoeff(), 1e-9);
  }
  EXPECT_GT(done, 450);
}

TEST(Interpolation, Schedule) {
  EXPECT_EQ(interpolation_schedule(1), (std::vector<double>{0.5}));
  EXPECT_EQ(interpolation_schedule(2), (std::vector<double>{1.0 / 3.0, 2.0 / 3.0}));
  EXPECT_EQ(interpolation_schedule(3), (std::vector<double>{0.25, 0.5, 0.75}));
  EXPECT_TRUE(interpolation_schedule(0).empty());
}

TEST(Interpolation, PosesOnSegmentAimedAtTarget) {
  std::mt19937_64 rng(4);
  const Intrinsics k = intrinsics(400, 200, 150, 400, 300);
  for (int trial = 0; trial < 100; ++trial) {
    const CameraPose a = oracle::random_pose(rng, 1), b = oracle::random_pose(rng, 2);
    const Vec3 target = oracle::random_vec(rng, 1.0);
    for (int n : {1, 2, 3}) {
      std::vector<CameraPose> poses;
      try {
        poses = interpolate_poses(a, b, target, n);
      } catch (const Error &) {
        continue;
      }
      ASSERT_EQ(static_cast<int>(poses.size()), n);
      const Vec3 ca = a.center(), dir = (b.center() - ca).normalized();
      double last_t = 0.0;
      for (int i = 0; i < n; ++i) {
        EXPECT_EQ(poses[i].pose_id, i + 1);
        const Vec3 c = poses[i].center();
        const Vec3 off = (c - ca) - (c - ca).dot(dir) * dir;
        EXPECT_LT(off.norm(), 1e-12 * std::max(1.0, (b.center() - ca).norm()) * 100);
        const double t = (c - ca).dot(dir) / (b.center() - ca).norm();
        EXPECT_NEAR(t, (i + 1.0) / (n + 1.0), 1e-9);
        EXPECT_GT(t, last_t);
        last_t = t;
        const auto p = project_point(target, poses[i], k, nullptr, 1.0);
        EXPECT_LT(std::hypot(p.u - k.cx, p.v - k.cy), 0.5);
      }
    }
  }
}

TEST(Interpolation, FailingStepIsNamed) {
  CameraPose a = CameraPose::from_center(Mat3::Identity(), Vec3(-1, 0, 0), 7);
  CameraPose b = CameraPose::from_center(Mat3::Identity(), Vec3(1, 0, 0), 8);
  try {
    interpolate_poses(a, b, Vec3(0, 0, 0), 1);
    ADD_FAILURE() << "expected CoincidentTarget";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::CoincidentTarget);
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(Synthetic, DeterministicAndDisjoint) {
  const auto a = make_synthetic_scene(5, 3, 60, 6), b = make_synthetic_scene(5, 3, 60, 6);
  ASSERT_EQ(a.cloud.size(), b.cloud.size());
  for (std::size_t i = 0; i < a.cloud.size(); ++i) EXPECT_EQ(a.cloud.positions[i], b.cloud.positions[i]);
  for (std::size_t i = 0; i < a.images.size(); ++i) {
    EXPECT_EQ(a.images[i], b.images[i]);
    EXPECT_EQ(a.depths[i].values, b.depths[i].values);
  }
  ASSERT_EQ(a.masks.size(), 3u);
  for (std::size_t i = 0; i < a.cloud.size(); ++i) {
    int owners = 0;
    for (const auto &m : a.masks) owners += m.bits[i];
    EXPECT_EQ(owners, 1);
  }
  for (std::size_t i = 0; i < a.boxes.size(); ++i)
    for (std::size_t j = i + 1; j < a.boxes.size(); ++j) {
      const auto &p = a.boxes[i], &q = a.boxes[j];
      const bool overlap = p.lo.x() < q.hi.x() && q.lo.x() < p.hi.x() && p.lo.y() < q.hi.y() && q.lo.y() < p.hi.y();
      EXPECT_FALSE(overlap);
    }
}

TEST(Synthetic, FacingPoseSeesMoreThanOpposite) {
  const auto s = make_synthetic_scene(2, 3, 300, 8);
  for (std::size_t b = 0; b < s.boxes.size(); ++b) {
    const Vec3 box_center = 0.5 * (s.boxes[b].lo + s.boxes[b].hi);
    // Facing: the camera closest to the box; opposite: the farthest one.
    std::size_t near = 0, far = 0;
    for (std::size_t p = 0; p < s.poses.size(); ++p) {
      const double d = (s.poses[p].center() - box_center).norm();
      if (d < (s.poses[near].center() - box_center).norm()) near = p;
      if (d > (s.poses[far].center() - box_center).norm()) far = p;
    }
    oracle::VisibilityCase near_case{s.cloud, s.masks[b], s.poses[near], s.intrinsics, s.depths[near], 0.05};
    oracle::VisibilityCase far_case{s.cloud, s.masks[b], s.poses[far], s.intrinsics, s.depths[far], 0.05};
    const auto sn = visibility_score(s.masks[b], s.cloud, s.poses[near], s.intrinsics, s.depths[near], 0.05).score;
    const auto sf = visibility_score(s.masks[b], s.cloud, s.poses[far], s.intrinsics, s.depths[far], 0.05).score;
    EXPECT_EQ(sn, oracle::brute_visibility(near_case));
    EXPECT_EQ(sf, oracle::brute_visibility(far_case));
    EXPECT_GT(sn, sf) << "box " << b;
  }
}
