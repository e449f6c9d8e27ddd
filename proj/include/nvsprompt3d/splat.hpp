// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/parallel.hpp>
#include <nvsprompt3d/types.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

namespace nvsp {

struct Gaussian {
  Vec3 mean = Vec3::Zero();
  Mat3 covariance = Mat3::Identity();
  double opacity = 1.0;
  Vec3 color = Vec3::Zero();
};

/// Gaussians index-aligned with the point cloud they were anchored to.
struct GaussianScene {
  std::vector<Gaussian> gaussians;

  std::size_t size() const { return gaussians.size(); }
};

struct ProjectedGaussian {
  Vec2 mean = Vec2::Zero();
  Mat2 covariance = Mat2::Identity();
  double depth = 0.0;
};

inline constexpr double kNearPlane = 0.01;
inline constexpr double kCovarianceDilation = 0.3;
inline constexpr double kMaxAlpha = 0.99;
inline constexpr double kMinAlpha = 1.0 / 255.0;
inline constexpr double kMinTransmittance = 1e-4;
// Support of a splat: pixels within Mahalanobis distance 3 (exponent 4.5).
inline constexpr double kMaxExponent = 4.5;

/// Mean distance from every point to its `k` nearest neighbours (excluding
/// itself), found exactly with a uniform hash grid.
inline std::vector<double> mean_knn_distance(std::span<const Vec3> points, int k, int workers = 1) {
  const std::size_t n = points.size();
  std::vector<double> out(n, 0.0);
  if (n <= static_cast<std::size_t>(k)) return out;

  Vec3 lo = points[0], hi = points[0];
  for (const auto &p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 extent = (hi - lo).cwiseMax(Vec3::Constant(1e-9));
  // Roughly a couple of points per cell for uniformly spread data.
  double cell = std::cbrt(extent.prod() * 2.0 / static_cast<double>(n));
  cell = std::max({cell, extent.maxCoeff() / 1024.0, 1e-9});

  auto cell_of = [&](const Vec3 &p) {
    return std::array<std::int64_t, 3>{static_cast<std::int64_t>(std::floor((p.x() - lo.x()) / cell)),
                                       static_cast<std::int64_t>(std::floor((p.y() - lo.y()) / cell)),
                                       static_cast<std::int64_t>(std::floor((p.z() - lo.z()) / cell))};
  };
  auto key = [](std::int64_t x, std::int64_t y, std::int64_t z) {
    return (static_cast<std::uint64_t>(x & 0x1FFFFF) << 42) | (static_cast<std::uint64_t>(y & 0x1FFFFF) << 21) |
           static_cast<std::uint64_t>(z & 0x1FFFFF);
  };
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> grid;
  grid.reserve(n);
  std::array<std::int64_t, 3> max_cell{0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = cell_of(points[i]);
    for (int a = 0; a < 3; ++a) max_cell[a] = std::max(max_cell[a], c[a]);
    grid[key(c[0], c[1], c[2])].push_back(static_cast<std::uint32_t>(i));
  }
  const std::int64_t max_ring = std::max({max_cell[0], max_cell[1], max_cell[2]}) + 1;

  parallel_chunks(n, workers, 4096, [&](std::size_t begin, std::size_t end) {
    std::vector<double> best;
    for (std::size_t i = begin; i < end; ++i) {
      const Vec3 &p = points[i];
      const auto c = cell_of(p);
      best.assign(k, std::numeric_limits<double>::infinity());
      for (std::int64_t ring = 0; ring <= max_ring; ++ring) {
        for (std::int64_t dx = -ring; dx <= ring; ++dx)
          for (std::int64_t dy = -ring; dy <= ring; ++dy)
            for (std::int64_t dz = -ring; dz <= ring; ++dz) {
              if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) continue;
              const std::int64_t x = c[0] + dx, y = c[1] + dy, z = c[2] + dz;
              if (x < 0 || y < 0 || z < 0 || x > max_cell[0] || y > max_cell[1] || z > max_cell[2]) continue;
              const auto it = grid.find(key(x, y, z));
              if (it == grid.end()) continue;
              for (auto j : it->second) {
                if (j == i) continue;
                const double d = (points[j] - p).norm();
                if (d < best.back()) {
                  best.back() = d;
                  std::sort(best.begin(), best.end());
                }
              }
            }
        // Anything outside the searched cube is at least ring * cell away.
        if (best.back() <= static_cast<double>(ring) * cell) break;
      }
      double s = 0.0;
      for (double d : best) s += d;
      out[i] = s / k;
    }
  });
  return out;
}

/// Anchors one isotropic Gaussian on every point: the mean is the point, the
/// color its color, the standard deviation the mean distance to its three
/// nearest neighbours (0.01 m for clouds of fewer than 4 points), opacity 0.9.
inline GaussianScene init_from_pointcloud(const PointCloud &cloud, int workers = 1) {
  if (cloud.size() == 0) fail(ErrorCode::EmptyInput, "init_from_pointcloud: empty cloud");
  std::vector<double> scale(cloud.size(), 0.01);
  if (cloud.size() >= 4) scale = mean_knn_distance(cloud.positions, 3, workers);
  GaussianScene scene;
  scene.gaussians.resize(cloud.size());
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    Gaussian &g = scene.gaussians[i];
    g.mean = cloud.positions[i];
    g.color = cloud.colors[i];
    const double s = std::max(scale[i], 1e-6); // coincident points still get a PD covariance
    g.covariance = Mat3::Identity() * (s * s);
    g.opacity = 0.9;
  }
  return scene;
}

inline ProjectedGaussian project_gaussian(const Gaussian &g, const CameraPose &pose, const Intrinsics &intr) {
  const Vec3 t = pose.to_camera(g.mean);
  if (!(t.z() > kNearPlane)) fail(ErrorCode::BehindCamera, "project_gaussian: mean at camera depth " + std::to_string(t.z()));
  const double inv_z = 1.0 / t.z();
  Eigen::Matrix<double, 2, 3> jac;
  jac << intr.fx * inv_z, 0.0, -intr.fx * t.x() * inv_z * inv_z, //
      0.0, intr.fy * inv_z, -intr.fy * t.y() * inv_z * inv_z;
  const Eigen::Matrix<double, 2, 3> m = jac * pose.rotation;
  ProjectedGaussian out;
  out.mean = Vec2(intr.fx * t.x() * inv_z + intr.cx, intr.fy * t.y() * inv_z + intr.cy);
  out.covariance = m * g.covariance * m.transpose() + kCovarianceDilation * Mat2::Identity();
  out.covariance(0, 1) = out.covariance(1, 0) = 0.5 * (out.covariance(0, 1) + out.covariance(1, 0));
  out.depth = t.z();
  return out;
}

struct RenderedImage {
  Image color;
  std::vector<float> alpha; // accumulated 1 - T
  std::vector<float> depth; // alpha-weighted expected camera depth, 0 where alpha == 0

  int width() const { return color.width; }
  int height() const { return color.height; }
};

struct RenderOptions {
  int tile_size = 16;
  int workers = 1;
  Vec3 background = Vec3::Ones();
};

namespace detail {

struct Splat2D {
  double mx, my;
  double ca, cb, cc; // inverse 2D covariance (conic)
  double opacity;
  double depth;
  double r, g, b;
  int x0, x1, y0, y1; // inclusive pixel support
};

} // namespace detail

/// Tile-based forward splatting. Each pixel blends the Gaussians whose
/// support contains it front to back in order of (camera depth, index):
/// alpha_i = min(0.99, o_i exp(-0.5 d^T S^-1 d)), weight alpha_i * T_i with
/// T_i the product of (1 - alpha_j) in front. Contributions below 1/255 or
/// beyond Mahalanobis distance 3 are skipped and a pixel stops once T <
/// 1e-4. What remains of T is filled with the background. When `subset` is
/// given only Gaussians with a set bit are drawn.
inline RenderedImage render(const GaussianScene &scene, const CameraPose &pose, const Intrinsics &intr,
                            const InstanceMask *subset = nullptr, const RenderOptions &opt = {}) {
  using detail::Splat2D;
  if (subset && subset->size() != scene.size())
    fail(ErrorCode::DimensionMismatch, "render: subset length " + std::to_string(subset->size()) +
                                           " != scene size " + std::to_string(scene.size()));
  const int W = intr.width, H = intr.height;
  const int ts = std::max(1, opt.tile_size);
  const int tiles_x = (W + ts - 1) / ts, tiles_y = (H + ts - 1) / ts;
  const std::size_t n = scene.size();

  std::vector<Splat2D> splats(n);
  std::vector<std::uint8_t> live(n, 0);
  parallel_chunks(n, opt.workers, 8192, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      if (subset && !subset->bits[i]) continue;
      const Gaussian &g = scene.gaussians[i];
      if (!(g.opacity >= kMinAlpha)) continue;
      if (!(pose.to_camera(g.mean).z() > kNearPlane)) continue;
      const ProjectedGaussian pg = project_gaussian(g, pose, intr);
      const Mat2 &cov = pg.covariance;
      const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
      if (!(det > 0.0)) continue;
      const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
      const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
      // Beyond this exponent a splat is either outside 3 sigma or below 1/255.
      const double max_exponent = std::min(kMaxExponent, std::log(std::min(g.opacity, kMaxAlpha) / kMinAlpha));
      const double radius = std::sqrt(2.0 * max_exponent * lambda_max) + 1e-6;
      Splat2D s;
      s.mx = pg.mean.x();
      s.my = pg.mean.y();
      s.x0 = static_cast<int>(std::max(0.0, std::ceil(s.mx - radius)));
      s.x1 = static_cast<int>(std::min<double>(W - 1, std::floor(s.mx + radius)));
      s.y0 = static_cast<int>(std::max(0.0, std::ceil(s.my - radius)));
      s.y1 = static_cast<int>(std::min<double>(H - 1, std::floor(s.my + radius)));
      if (!std::isfinite(s.mx) || !std::isfinite(s.my) || s.x0 > s.x1 || s.y0 > s.y1) continue;
      s.ca = cov(1, 1) / det;
      s.cb = -cov(0, 1) / det;
      s.cc = cov(0, 0) / det;
      s.opacity = g.opacity;
      s.depth = pg.depth;
      s.r = g.color.x();
      s.g = g.color.y();
      s.b = g.color.z();
      splats[i] = s;
      live[i] = 1;
    }
  });

  // Bin splats into tiles in index order, then sort each tile by (depth, index).
  const std::size_t ntiles = static_cast<std::size_t>(tiles_x) * tiles_y;
  std::vector<std::uint32_t> offsets(ntiles + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!live[i]) continue;
    const Splat2D &s = splats[i];
    for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty)
      for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx) ++offsets[static_cast<std::size_t>(ty) * tiles_x + tx + 1];
  }
  for (std::size_t t = 0; t < ntiles; ++t) offsets[t + 1] += offsets[t];
  std::vector<std::uint32_t> entries(offsets.back());
  {
    std::vector<std::uint32_t> cursor(offsets.begin(), offsets.end() - 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (!live[i]) continue;
      const Splat2D &s = splats[i];
      for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty)
        for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx)
          entries[cursor[static_cast<std::size_t>(ty) * tiles_x + tx]++] = static_cast<std::uint32_t>(i);
    }
  }

  RenderedImage out;
  out.color = Image(W, H);
  out.alpha.assign(static_cast<std::size_t>(W) * H, 0.0f);
  out.depth.assign(static_cast<std::size_t>(W) * H, 0.0f);

  parallel_for(ntiles, opt.workers, [&](std::size_t tile) {
    auto first = entries.begin() + offsets[tile], last = entries.begin() + offsets[tile + 1];
    std::sort(first, last, [&](std::uint32_t a, std::uint32_t b) {
      return splats[a].depth != splats[b].depth ? splats[a].depth < splats[b].depth : a < b;
    });
    const int px0 = static_cast<int>(tile % tiles_x) * ts, py0 = static_cast<int>(tile / tiles_x) * ts;
    const int tw = std::min(ts, W - px0), th = std::min(ts, H - py0);
    const std::size_t npix = static_cast<std::size_t>(tw) * th;
    std::vector<double> trans(npix, 1.0), acc(npix * 4, 0.0);
    std::vector<std::uint8_t> done(npix, 0);
    std::size_t active = npix;

    for (auto it = first; it != last && active > 0; ++it) {
      const Splat2D &s = splats[*it];
      const int x0 = std::max(s.x0, px0), x1 = std::min(s.x1, px0 + tw - 1);
      const int y0 = std::max(s.y0, py0), y1 = std::min(s.y1, py0 + th - 1);
      for (int y = y0; y <= y1; ++y) {
        const double dy = y - s.my;
        for (int x = x0; x <= x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y - py0) * tw + (x - px0);
          if (done[p]) continue;
          const double dx = x - s.mx;
          const double power = 0.5 * (s.ca * dx * dx + s.cc * dy * dy) + s.cb * dx * dy;
          if (!(power <= kMaxExponent)) continue;
          const double a = std::min(kMaxAlpha, s.opacity * std::exp(-power));
          if (a < kMinAlpha) continue;
          const double w = a * trans[p];
          acc[4 * p + 0] += w * s.r;
          acc[4 * p + 1] += w * s.g;
          acc[4 * p + 2] += w * s.b;
          acc[4 * p + 3] += w * s.depth;
          trans[p] *= 1.0 - a;
          if (trans[p] < kMinTransmittance) {
            done[p] = 1;
            --active;
          }
        }
      }
    }

    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * tw + x;
        const int gx = px0 + x, gy = py0 + y;
        const double t = trans[p];
        for (int c = 0; c < 3; ++c) out.color.at(gx, gy, c) = static_cast<float>(acc[4 * p + c] + t * opt.background[c]);
        const std::size_t o = static_cast<std::size_t>(gy) * W + gx;
        out.alpha[o] = static_cast<float>(1.0 - t);
        out.depth[o] = t < 1.0 ? static_cast<float>(acc[4 * p + 3] / (1.0 - t)) : 0.0f;
      }
  });
  return out;
}

/// Rendered depth as a DepthMap (pixels with no coverage are invalid).
inline DepthMap rendered_depth(const RenderedImage &r, int pose_id) {
  DepthMap d;
  d.width = r.width();
  d.height = r.height();
  d.pose_id = pose_id;
  d.values = r.depth;
  return d;
}

} // namespace nvsp
