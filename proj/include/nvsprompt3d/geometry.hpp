// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/types.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace nvsp {

struct ProjectedPoint {
  double u = 0.0, v = 0.0, z = 0.0;
  bool visible = false;
};

struct VisibilityScore {
  int pose_id = 0;
  std::size_t score = 0;
};

/// Nearest pixel of a continuous image coordinate (round half up), clamped
/// to the last row/column so that u in [W-0.5, W) still indexes pixel W-1.
inline int nearest_pixel(double coord, int extent) {
  return std::min(static_cast<int>(std::floor(coord + 0.5)), extent - 1);
}

/// Pinhole projection of one world point. With `depth == nullptr` the
/// occlusion condition is skipped and visibility only requires the point to
/// be in front of the camera and inside the image.
inline ProjectedPoint project_point(const Vec3 &world, const CameraPose &pose, const Intrinsics &intr,
                                    const DepthMap *depth, double delta) {
  const Vec3 cam = pose.to_camera(world);
  ProjectedPoint p;
  p.z = cam.z();
  p.u = intr.fx * (cam.x() / cam.z()) + intr.cx;
  p.v = intr.fy * (cam.y() / cam.z()) + intr.cy;
  if (!(p.z > 0.0)) return p;
  if (!(p.u >= 0.0 && p.u < intr.width && p.v >= 0.0 && p.v < intr.height)) return p;
  if (depth == nullptr) {
    p.visible = true;
    return p;
  }
  const float d = depth->at(nearest_pixel(p.u, intr.width), nearest_pixel(p.v, intr.height));
  p.visible = d > 0.0f && std::abs(p.z - static_cast<double>(d)) <= delta;
  return p;
}

/// Projects points into a posed depth view. A point is visible when it lies
/// in front of the camera, inside [0,W)x[0,H), and its camera depth agrees
/// with a valid depth sample at the nearest pixel within `delta`.
inline std::vector<ProjectedPoint> project_points(std::span<const Vec3> points, const CameraPose &pose,
                                                  const Intrinsics &intr, const DepthMap &depth, double delta) {
  if (!(delta > 0.0)) fail(ErrorCode::SchemaViolation, "delta: must be > 0");
  std::vector<ProjectedPoint> out;
  out.reserve(points.size());
  for (const auto &p : points) out.push_back(project_point(p, pose, intr, &depth, delta));
  return out;
}

inline VisibilityScore visibility_score(const InstanceMask &mask, const PointCloud &cloud, const CameraPose &pose,
                                        const Intrinsics &intr, const DepthMap &depth, double delta) {
  if (mask.size() != cloud.size())
    fail(ErrorCode::DimensionMismatch, "mask " + std::to_string(mask.instance_id) + ": length " +
                                           std::to_string(mask.size()) + " != N=" + std::to_string(cloud.size()));
  if (!(delta > 0.0)) fail(ErrorCode::SchemaViolation, "delta: must be > 0");
  VisibilityScore s{pose.pose_id, 0};
  bool any = false;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!mask.bits[i]) continue;
    any = true;
    if (project_point(cloud.positions[i], pose, intr, &depth, delta).visible) ++s.score;
  }
  if (!any) fail(ErrorCode::EmptyMask, "mask " + std::to_string(mask.instance_id) + " has no points");
  return s;
}

/// Pose ids of the k highest scores (ties by ascending pose_id). Zero-score
/// poses are never selected.
inline std::vector<int> select_top_k(std::vector<VisibilityScore> scores, int k) {
  if (k < 1) fail(ErrorCode::SchemaViolation, "top_k: must be >= 1");
  std::sort(scores.begin(), scores.end(), [](const VisibilityScore &a, const VisibilityScore &b) {
    return a.score != b.score ? a.score > b.score : a.pose_id < b.pose_id;
  });
  std::vector<int> out;
  for (const auto &s : scores) {
    if (s.score == 0 || static_cast<int>(out.size()) == k) break;
    out.push_back(s.pose_id);
  }
  if (out.empty()) fail(ErrorCode::NoVisiblePose, "no pose sees any masked point");
  return out;
}

/// Sum of Euclidean distances from x to every point.
inline double distance_sum(std::span<const Vec3> points, const Vec3 &x) {
  double s = 0.0;
  for (const auto &p : points) s += (p - x).norm();
  return s;
}

/// Weiszfeld iteration for the point minimizing the sum of distances.
///
/// Starts at the centroid. The step tolerance scales with the data: it is
/// 1e-5 times the mean of the per-axis (population) standard deviations.
/// Points within 1e-10 of the current estimate are left out of the weighted
/// average; if every point is, the estimate is returned as is. `on_iterate`
/// (if set) sees each accepted estimate, starting with the centroid.
inline Vec3 geometric_median(std::span<const Vec3> points, int max_iter = 1000, double eps_ratio = 1e-5,
                             const std::function<void(const Vec3 &)> &on_iterate = {}) {
  if (points.empty()) fail(ErrorCode::EmptyInput, "geometric_median: no points");
  const double n = static_cast<double>(points.size());
  Vec3 mean = Vec3::Zero();
  for (const auto &p : points) mean += p;
  mean /= n;
  Vec3 var = Vec3::Zero();
  for (const auto &p : points) var += (p - mean).cwiseAbs2();
  const double sigma = (var / n).cwiseSqrt().mean();
  const double eps = sigma * eps_ratio;

  Vec3 c = mean;
  if (on_iterate) on_iterate(c);
  for (int it = 0; it < max_iter; ++it) {
    Vec3 num = Vec3::Zero();
    double den = 0.0;
    for (const auto &p : points) {
      const double d = (p - c).norm();
      if (d <= 1e-10) continue;
      num += p / d;
      den += 1.0 / d;
    }
    if (den == 0.0) break;
    const Vec3 next = num / den;
    if ((next - c).norm() < eps) break;
    c = next;
    if (on_iterate) on_iterate(c);
  }
  return c;
}

/// Camera-to-world rotation whose +z axis points from `center` at `target`,
/// x = normalize(up x f), y = f x x. `up` is the reference for the image y axis.
inline Mat3 look_at_rotation(const Vec3 &center, const Vec3 &up, const Vec3 &target) {
  const Vec3 dir = target - center;
  if (!(dir.norm() > 1e-12)) fail(ErrorCode::CoincidentTarget, "look_at: target coincides with camera center");
  const Vec3 f = dir.normalized();
  if (!(up.norm() > 0.0)) fail(ErrorCode::DegenerateUp, "look_at: zero up vector");
  const Vec3 cross = up.normalized().cross(f);
  if (cross.norm() < 1e-8) fail(ErrorCode::DegenerateUp, "look_at: up vector parallel to viewing direction");
  const Vec3 r = cross.normalized();
  const Vec3 u = f.cross(r);
  Mat3 c2w;
  c2w.col(0) = r;
  c2w.col(1) = u;
  c2w.col(2) = f;
  return c2w;
}

/// Re-aims a camera at `target`, keeping its center and its up reference
/// (the camera-to-world y column).
inline CameraPose look_at(const CameraPose &pose, const Vec3 &target) {
  const Vec3 center = pose.center();
  return CameraPose::from_center(look_at_rotation(center, pose.up_reference(), target), center, pose.pose_id);
}

/// Interpolation factors n / (n_interp + 1) for n = 1..n_interp.
inline std::vector<double> interpolation_schedule(int n_interp) {
  std::vector<double> t;
  for (int n = 1; n <= n_interp; ++n) t.push_back(static_cast<double>(n) / static_cast<double>(n_interp + 1));
  return t;
}

/// Poses strictly between pose_a and pose_b on the segment joining their
/// centers, each aimed at `target` with pose_a's up reference. The n-th pose
/// (1-based) gets pose_id n.
inline std::vector<CameraPose> interpolate_poses(const CameraPose &pose_a, const CameraPose &pose_b,
                                                 const Vec3 &target, int n_interp) {
  if (n_interp < 1) fail(ErrorCode::SchemaViolation, "n_interp: must be >= 1 to interpolate");
  const Vec3 ca = pose_a.center(), cb = pose_b.center();
  const Vec3 up = pose_a.up_reference();
  const auto schedule = interpolation_schedule(n_interp);
  std::vector<CameraPose> out;
  out.reserve(schedule.size());
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const double t = schedule[i];
    const Vec3 center = (1.0 - t) * ca + t * cb;
    try {
      out.push_back(CameraPose::from_center(look_at_rotation(center, up, target), center, static_cast<int>(i + 1)));
    } catch (const Error &e) {
      throw Error(e.code(), "interpolation step " + std::to_string(i + 1) + " between poses " +
                                std::to_string(pose_a.pose_id) + " and " + std::to_string(pose_b.pose_id) + ": " +
                                e.what());
    }
  }
  return out;
}

} // namespace nvsp
