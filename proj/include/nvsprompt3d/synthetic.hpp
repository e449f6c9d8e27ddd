// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/geometry.hpp>
#include <nvsprompt3d/image_io.hpp>
#include <nvsprompt3d/ply.hpp>
#include <nvsprompt3d/scene_io.hpp>
#include <nvsprompt3d/types.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace nvsp {

struct SyntheticBox {
  Vec3 lo, hi;
  Vec3 color;
  std::string label;
};

/// Axis-aligned colored boxes standing on z = 0, sampled on their surfaces,
/// with a ring of cameras looking at the scene and analytic depth + color.
struct SyntheticScene {
  PointCloud cloud;
  std::vector<SyntheticBox> boxes;
  std::vector<InstanceMask> masks; // mask i covers box i, instance_id = i
  std::vector<CameraPose> poses;
  std::vector<DepthMap> depths;
  std::vector<Image> images;
  Intrinsics intrinsics;
};

struct SyntheticOptions {
  int width = 640;
  int height = 480;
  double focal = 850.0;
  double ring_radius = 3.0;
  double ring_height = 1.6;
  double layout_radius = 0.9;
  Vec3 background = Vec3::Constant(0.4);
};

namespace detail {

inline const std::array<std::pair<const char *, Vec3>, 6> &palette() {
  static const std::array<std::pair<const char *, Vec3>, 6> colors{{
      {"red", Vec3(1, 0, 0)},
      {"green", Vec3(0, 1, 0)},
      {"blue", Vec3(0, 0, 1)},
      {"yellow", Vec3(1, 1, 0)},
      {"magenta", Vec3(1, 0, 1)},
      {"cyan", Vec3(0, 1, 1)},
  }};
  return colors;
}

// Platform-independent uniform draw in [0, 1).
inline double uniform01(std::mt19937_64 &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64 &rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Entry distance along the ray, or +inf on a miss.
inline double ray_box(const Vec3 &origin, const Vec3 &dir, const SyntheticBox &b) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < b.lo[a] || origin[a] > b.hi[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double ta = (b.lo[a] - origin[a]) / dir[a], tb = (b.hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0 > 0.0 ? t0 : std::numeric_limits<double>::infinity();
}

} // namespace detail

/// Ray-casts the boxes through every pixel. Depth is camera z (0 on a miss).
inline void cast_view(const std::vector<SyntheticBox> &boxes, const CameraPose &pose, const Intrinsics &intr,
                      const Vec3 &background, Image &image, DepthMap &depth) {
  image = Image(intr.width, intr.height);
  depth.width = intr.width;
  depth.height = intr.height;
  depth.pose_id = pose.pose_id;
  depth.values.assign(static_cast<std::size_t>(intr.width) * intr.height, 0.0f);
  const Vec3 origin = pose.center();
  const Mat3 c2w = pose.rotation.transpose();
  for (int y = 0; y < intr.height; ++y)
    for (int x = 0; x < intr.width; ++x) {
      // Camera-space direction with z = 1, so the ray parameter is the z-depth.
      const Vec3 dir = c2w * Vec3((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
      double best = std::numeric_limits<double>::infinity();
      int hit = -1;
      for (std::size_t b = 0; b < boxes.size(); ++b) {
        const double t = detail::ray_box(origin, dir, boxes[b]);
        if (t < best) {
          best = t;
          hit = static_cast<int>(b);
        }
      }
      const Vec3 c = hit >= 0 ? boxes[hit].color : background;
      for (int k = 0; k < 3; ++k) image.at(x, y, k) = static_cast<float>(c[k]);
      if (hit >= 0) depth.at(x, y) = static_cast<float>(best);
    }
}

inline SyntheticScene make_synthetic_scene(std::uint64_t seed, int n_boxes, int points_per_box, int n_poses,
                                           const SyntheticOptions &opt = {}) {
  if (n_boxes < 1 || n_boxes > static_cast<int>(detail::palette().size()))
    fail(ErrorCode::SchemaViolation, "n_boxes: must lie in [1, " + std::to_string(detail::palette().size()) + "]");
  if (points_per_box < 50) fail(ErrorCode::SchemaViolation, "points_per_box: must be >= 50");
  if (n_poses < 1) fail(ErrorCode::SchemaViolation, "n_poses: must be >= 1");
  std::mt19937_64 rng(seed);
  SyntheticScene s;

  // Non-overlapping footprints by rejection; the layout radius grows if the
  // disk gets crowded.
  double radius = opt.layout_radius;
  while (static_cast<int>(s.boxes.size()) < n_boxes) {
    bool placed = false;
    for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
      const double r = radius * std::sqrt(detail::uniform01(rng));
      const double phi = 2.0 * std::numbers::pi * detail::uniform01(rng);
      const Vec2 c(r * std::cos(phi), r * std::sin(phi));
      const Vec2 half(detail::uniform(rng, 0.15, 0.3), detail::uniform(rng, 0.15, 0.3));
      const double height = detail::uniform(rng, 0.3, 0.7);
      SyntheticBox box;
      box.lo = Vec3(c.x() - half.x(), c.y() - half.y(), 0.0);
      box.hi = Vec3(c.x() + half.x(), c.y() + half.y(), height);
      bool clear = true;
      for (const auto &o : s.boxes) {
        const double gap = 0.15;
        if (box.lo.x() < o.hi.x() + gap && o.lo.x() < box.hi.x() + gap && box.lo.y() < o.hi.y() + gap &&
            o.lo.y() < box.hi.y() + gap)
          clear = false;
      }
      if (!clear) continue;
      const auto &[name, color] = detail::palette()[s.boxes.size()];
      box.color = color;
      box.label = name;
      s.boxes.push_back(box);
      placed = true;
    }
    if (!placed) radius *= 1.25;
  }

  for (std::size_t b = 0; b < s.boxes.size(); ++b) {
    const auto &box = s.boxes[b];
    const Vec3 e = box.hi - box.lo;
    const std::array<double, 3> area{e.y() * e.z(), e.x() * e.z(), e.x() * e.y()}; // faces normal to x, y, z
    const double total = 2.0 * (area[0] + area[1] + area[2]);
    std::vector<std::size_t> idx;
    for (int i = 0; i < points_per_box; ++i) {
      double pick = detail::uniform01(rng) * total;
      int axis = 0;
      while (axis < 2 && pick >= 2.0 * area[axis]) pick -= 2.0 * area[axis++];
      const bool high = pick >= area[axis];
      Vec3 p;
      for (int a = 0; a < 3; ++a) p[a] = detail::uniform(rng, box.lo[a], box.hi[a]);
      p[axis] = high ? box.hi[axis] : box.lo[axis];
      idx.push_back(s.cloud.positions.size());
      s.cloud.positions.push_back(p);
      s.cloud.colors.push_back(box.color);
    }
    InstanceMask m;
    m.instance_id = static_cast<int>(b);
    s.masks.push_back(m);
  }
  for (std::size_t b = 0; b < s.masks.size(); ++b) {
    s.masks[b].bits.assign(s.cloud.size(), 0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(points_per_box); ++i) s.masks[b].bits[b * points_per_box + i] = 1;
  }

  Vec3 centroid = Vec3::Zero();
  for (const auto &p : s.cloud.positions) centroid += p;
  centroid /= static_cast<double>(s.cloud.size());

  s.intrinsics = Intrinsics{opt.focal, opt.focal, opt.width / 2.0, opt.height / 2.0, opt.width, opt.height};
  const Vec3 world_down(0.0, 0.0, -1.0);
  for (int i = 0; i < n_poses; ++i) {
    const double phi = 2.0 * std::numbers::pi * i / n_poses;
    const Vec3 center(centroid.x() + opt.ring_radius * std::cos(phi), centroid.y() + opt.ring_radius * std::sin(phi),
                      opt.ring_height);
    const CameraPose pose = CameraPose::from_center(look_at_rotation(center, world_down, centroid), center, i);
    s.poses.push_back(pose);
    Image image;
    DepthMap depth;
    cast_view(s.boxes, pose, s.intrinsics, opt.background, image, depth);
    s.images.push_back(std::move(image));
    s.depths.push_back(std::move(depth));
  }
  return s;
}

/// Writes the scene as a loadable manifest directory (PLY, JSON, DMAP, PNG),
/// with one pure-color reference image per label as queries and the box
/// masks as ground truth. Returns the manifest path.
inline fs::path write_synthetic_scene(const fs::path &dir, const SyntheticScene &s, const PipelineParams &params,
                                      const std::string &scene_id = "synthetic") {
  fs::create_directories(dir / "depth");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "queries");
  write_ply(dir / "cloud.ply", s.cloud, true);

  json masks = json::array(), gt = json::array(), queries = json::array();
  for (std::size_t b = 0; b < s.masks.size(); ++b) {
    const auto idx = s.masks[b].indices();
    masks.push_back(json{{"instance_id", s.masks[b].instance_id}, {"indices", idx}});
    gt.push_back(json{{"label", s.boxes[b].label}, {"indices", idx}});
  }
  for (const auto &[name, color] : detail::palette()) {
    Image patch(16, 16);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        for (int c = 0; c < 3; ++c) patch.at(x, y, c) = static_cast<float>(color[c]);
    write_png(dir / "queries" / (std::string(name) + ".png"), patch);
    queries.push_back(json{{"label", name}, {"image", "queries/" + std::string(name) + ".png"}});
  }
  write_json(dir / "masks.json", masks);
  write_json(dir / "ground_truth.json", gt);
  json poses = json::array();
  for (std::size_t i = 0; i < s.poses.size(); ++i) {
    poses.push_back(json{{"pose_id", s.poses[i].pose_id}, {"camera_to_world", pose_matrix_json(s.poses[i].camera_to_world())}});
    write_depth(dir / "depth" / (std::to_string(s.poses[i].pose_id) + ".dmap"), s.depths[i]);
    write_png(dir / "images" / (std::to_string(s.poses[i].pose_id) + ".png"), s.images[i]);
  }
  write_json(dir / "poses.json", poses);
  write_json(dir / "intrinsics.json", intrinsics_json(s.intrinsics));

  const json manifest{{"scene_id", scene_id},
                      {"point_cloud", "cloud.ply"},
                      {"masks", "masks.json"},
                      {"poses", "poses.json"},
                      {"intrinsics", "intrinsics.json"},
                      {"depth_dir", "depth"},
                      {"image_dir", "images"},
                      {"ground_truth", "ground_truth.json"},
                      {"queries", queries},
                      {"delta", params.delta},
                      {"top_k", params.top_k},
                      {"n_interp", params.n_interp},
                      {"alpha", params.alpha},
                      {"pad", params.pad},
                      {"prompt_mode", to_string(params.prompt_mode)},
                      {"fusion_mode", to_string(params.fusion_mode)}};
  write_json(dir / "manifest.json", manifest);
  return dir / "manifest.json";
}

} // namespace nvsp
