// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace nvsp {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Colored points in world coordinates (meters). Colors are RGB in [0,1].
struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;

  std::size_t size() const { return positions.size(); }

  void validate() const {
    if (positions.empty()) fail(ErrorCode::SchemaViolation, "point_cloud: no points");
    if (colors.size() != positions.size())
      fail(ErrorCode::DimensionMismatch, "point_cloud.colors: " + std::to_string(colors.size()) +
                                             " colors for " + std::to_string(positions.size()) + " points");
    for (std::size_t i = 0; i < positions.size(); ++i) {
      if (!positions[i].allFinite())
        fail(ErrorCode::SchemaViolation, "point_cloud.positions[" + std::to_string(i) + "]: non-finite");
      const Vec3 &c = colors[i];
      if (!c.allFinite() || c.minCoeff() < 0.0 || c.maxCoeff() > 1.0)
        fail(ErrorCode::SchemaViolation, "point_cloud.colors[" + std::to_string(i) + "]: outside [0,1]");
    }
  }
};

/// Binary membership of points in one instance.
struct InstanceMask {
  int instance_id = 0;
  std::vector<std::uint8_t> bits;

  std::size_t size() const { return bits.size(); }

  std::size_t count() const {
    std::size_t n = 0;
    for (auto b : bits) n += b ? 1 : 0;
    return n;
  }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < bits.size(); ++i)
      if (bits[i]) out.push_back(i);
    return out;
  }

  static InstanceMask from_indices(int id, std::size_t n, const std::vector<std::size_t> &idx) {
    InstanceMask m;
    m.instance_id = id;
    m.bits.assign(n, 0);
    for (auto i : idx) {
      if (i >= n)
        fail(ErrorCode::DimensionMismatch, "masks[" + std::to_string(id) + "].indices: index " +
                                               std::to_string(i) + " >= N=" + std::to_string(n));
      m.bits[i] = 1;
    }
    return m;
  }
};

/// Rigid world-to-camera transform x_cam = R * x_world + t. The camera looks
/// down +z with image u along +x and v along +y.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  int pose_id = 0;

  Vec3 to_camera(const Vec3 &world) const { return rotation * world + translation; }

  Vec3 center() const { return -rotation.transpose() * translation; }

  /// Second column of the camera-to-world rotation: the camera's y axis in world space.
  Vec3 up_reference() const { return rotation.row(1).transpose(); }

  Mat4 world_to_camera() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation;
    m.topRightCorner<3, 1>() = translation;
    return m;
  }

  Mat4 camera_to_world() const {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = rotation.transpose();
    m.topRightCorner<3, 1>() = center();
    return m;
  }

  static CameraPose from_camera_to_world(const Mat4 &c2w, int id) {
    CameraPose p;
    p.pose_id = id;
    p.rotation = c2w.topLeftCorner<3, 3>().transpose();
    p.translation = -p.rotation * c2w.topRightCorner<3, 1>();
    return p;
  }

  static CameraPose from_center(const Mat3 &cam_to_world_rotation, const Vec3 &center, int id) {
    CameraPose p;
    p.pose_id = id;
    p.rotation = cam_to_world_rotation.transpose();
    p.translation = -p.rotation * center;
    return p;
  }

  void validate() const {
    const std::string where = "poses[" + std::to_string(pose_id) + "]";
    if (!rotation.allFinite() || !translation.allFinite()) fail(ErrorCode::SchemaViolation, where + ": non-finite");
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (ortho > 1e-9) fail(ErrorCode::SchemaViolation, where + ": rotation not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-9)
      fail(ErrorCode::SchemaViolation, where + ": rotation determinant != +1");
  }
};

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.5, cy = 0.5;
  int width = 1, height = 1;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) fail(ErrorCode::SchemaViolation, "intrinsics.fx/fy: must be > 0");
    if (width <= 0 || height <= 0) fail(ErrorCode::SchemaViolation, "intrinsics.width/height: must be > 0");
    if (!(cx > 0.0 && cx < width)) fail(ErrorCode::SchemaViolation, "intrinsics.cx: must lie in (0, width)");
    if (!(cy > 0.0 && cy < height)) fail(ErrorCode::SchemaViolation, "intrinsics.cy: must lie in (0, height)");
  }
};

/// Per-pixel camera z-depth in meters; values <= 0 mark invalid pixels.
struct DepthMap {
  int width = 0, height = 0;
  int pose_id = 0;
  std::vector<float> values;

  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  float &at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Row-major interleaved RGB image, channels in [0,1].
struct Image {
  int width = 0, height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, float fill = 0.0f)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  bool empty() const { return width == 0 || height == 0; }

  float &at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image &) const = default;
};

} // namespace nvsp
