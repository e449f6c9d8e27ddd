// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/geometry.hpp>
#include <nvsprompt3d/scene_io.hpp>
#include <nvsprompt3d/splat.hpp>
#include <nvsprompt3d/types.hpp>

#include <algorithm>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace nvsp {

inline constexpr int kMinPromptSize = 8;
inline constexpr int kClosingSize = 5;
inline constexpr int kBlurSize = 15;

enum class ViewOrigin { Dataset, Adjusted, Interpolated };

inline std::string to_string(ViewOrigin o) {
  switch (o) {
  case ViewOrigin::Dataset: return "dataset";
  case ViewOrigin::Adjusted: return "adjusted";
  case ViewOrigin::Interpolated: return "interpolated";
  }
  return "dataset";
}

struct PixelRect {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1; // inclusive

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  bool operator==(const PixelRect &) const = default;
};

/// Pixels hit by the visible points of a mask, and their bounding box.
struct MaskProjection {
  std::vector<std::pair<int, int>> pixels; // (x, y), sorted and unique
  PixelRect bbox;
};

struct PromptImage {
  Image pixels;
  int instance_id = 0;
  int pose_id = 0;
  ViewOrigin origin = ViewOrigin::Dataset;
  PromptMode mode = PromptMode::Crop;
  std::string view_key; // "<pose_id>" or "<from>-<to>-<step>"

  std::string file_name() const { return to_string(origin) + "_" + view_key + "_" + to_string(mode) + ".png"; }
};

/// Projects the masked points and keeps the visible ones. With a null depth
/// map only frustum and image bounds are enforced.
inline MaskProjection project_mask(const InstanceMask &mask, std::span<const Vec3> points, const CameraPose &pose,
                                   const Intrinsics &intr, const DepthMap *depth, double delta) {
  if (mask.size() != points.size())
    fail(ErrorCode::DimensionMismatch, "mask " + std::to_string(mask.instance_id) + ": length does not match points");
  if (mask.count() == 0) fail(ErrorCode::EmptyMask, "mask " + std::to_string(mask.instance_id) + " has no points");
  MaskProjection proj;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!mask.bits[i]) continue;
    const ProjectedPoint p = project_point(points[i], pose, intr, depth, delta);
    if (!p.visible) continue;
    proj.pixels.emplace_back(nearest_pixel(p.u, intr.width), nearest_pixel(p.v, intr.height));
  }
  if (proj.pixels.empty())
    fail(ErrorCode::NoVisiblePixels, "instance " + std::to_string(mask.instance_id) + " not visible from pose " +
                                         std::to_string(pose.pose_id));
  std::sort(proj.pixels.begin(), proj.pixels.end());
  proj.pixels.erase(std::unique(proj.pixels.begin(), proj.pixels.end()), proj.pixels.end());
  auto &b = proj.bbox;
  b.x0 = b.y0 = std::numeric_limits<int>::max();
  b.x1 = b.y1 = std::numeric_limits<int>::min();
  for (const auto &[x, y] : proj.pixels) {
    b.x0 = std::min(b.x0, x);
    b.x1 = std::max(b.x1, x);
    b.y0 = std::min(b.y0, y);
    b.y1 = std::max(b.y1, y);
  }
  return proj;
}

inline MaskProjection project_mask(const InstanceMask &mask, const PointCloud &cloud, const CameraPose &pose,
                                   const Intrinsics &intr, const DepthMap &depth, double delta) {
  return project_mask(mask, cloud.positions, pose, intr, &depth, delta);
}

inline Image extract(const Image &image, const PixelRect &r) {
  Image out(r.width(), r.height());
  for (int y = 0; y < r.height(); ++y)
    std::copy_n(image.data.begin() + (static_cast<std::ptrdiff_t>(r.y0 + y) * image.width + r.x0) * 3, 3 * r.width(),
                out.data.begin() + static_cast<std::ptrdiff_t>(y) * out.width * 3);
  return out;
}

/// The bbox grown by `pad` on every side and clamped to the image.
inline PixelRect crop_rect(const PixelRect &bbox, int width, int height, int pad) {
  PixelRect r{std::max(0, bbox.x0 - pad), std::max(0, bbox.y0 - pad), std::min(width - 1, bbox.x1 + pad),
              std::min(height - 1, bbox.y1 + pad)};
  if (r.width() < kMinPromptSize || r.height() < kMinPromptSize)
    fail(ErrorCode::DegenerateCrop, "crop " + std::to_string(r.width()) + "x" + std::to_string(r.height()) +
                                        " is below the minimum " + std::to_string(kMinPromptSize) + "x" +
                                        std::to_string(kMinPromptSize));
  return r;
}

inline PromptImage crop(const Image &image, const MaskProjection &proj, int pad = 10) {
  PromptImage p;
  p.pixels = extract(image, crop_rect(proj.bbox, image.width, image.height, pad));
  p.mode = PromptMode::Crop;
  return p;
}

/// Side of the square framing a bbox so its larger side fills 70% of it,
/// ceil(max(w, h) / 0.7) computed in integers.
inline int blur_square_side(int bbox_width, int bbox_height) {
  const int longest = std::max(bbox_width, bbox_height);
  return std::max(kMinPromptSize, (longest * 10 + 6) / 7);
}

/// Square window of side `side` centred on the bbox and shifted (or, for
/// small images, clipped) to stay inside the image.
inline PixelRect centered_square(const PixelRect &bbox, int side, int width, int height) {
  auto place = [](int lo, int hi, int s, int extent, int &a, int &b) {
    if (s >= extent) {
      a = 0;
      b = extent - 1;
      return;
    }
    int start = lo + hi + 1 - s;
    start = start >= 0 ? start / 2 : -((-start + 1) / 2);
    start = std::clamp(start, 0, extent - s);
    a = start;
    b = start + s - 1;
  };
  PixelRect r;
  place(bbox.x0, bbox.x1, side, width, r.x0, r.x1);
  place(bbox.y0, bbox.y1, side, height, r.y0, r.y1);
  return r;
}

namespace detail {

// Separable square min/max filter on a binary mask. Out-of-image samples
// count as `outside`.
inline std::vector<std::uint8_t> morph(const std::vector<std::uint8_t> &in, int w, int h, int size, bool dilate,
                                       std::uint8_t outside) {
  const int r = size / 2;
  std::vector<std::uint8_t> tmp(in.size()), out(in.size());
  auto pick = [dilate](std::uint8_t a, std::uint8_t b) { return dilate ? std::max(a, b) : std::min(a, b); };
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = dilate ? 0 : 1;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        v = pick(v, (xx < 0 || xx >= w) ? outside : in[static_cast<std::size_t>(y) * w + xx]);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = v;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      std::uint8_t v = dilate ? 0 : 1;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        v = pick(v, (yy < 0 || yy >= h) ? outside : tmp[static_cast<std::size_t>(yy) * w + x]);
      }
      out[static_cast<std::size_t>(y) * w + x] = v;
    }
  return out;
}

} // namespace detail

/// Separable box blur; windows are clipped at the border and averaged over
/// the samples they actually cover.
inline Image box_blur(const Image &image, int size) {
  const int r = size / 2, w = image.width, h = image.height;
  Image tmp(w, h), out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int a = std::max(0, x - r), b = std::min(w - 1, x + r);
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = a; k <= b; ++k) s += image.at(k, y, c);
        tmp.at(x, y, c) = static_cast<float>(s / (b - a + 1));
      }
    }
  for (int y = 0; y < h; ++y) {
    const int a = std::max(0, y - r), b = std::min(h - 1, y + r);
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int k = a; k <= b; ++k) s += tmp.at(x, k, c);
        out.at(x, y, c) = static_cast<float>(s / (b - a + 1));
      }
  }
  return out;
}

/// Closed-mask region kept sharp, everything else blurred, framed by a
/// square whose side is the bbox's longest side over 0.7.
inline PromptImage blur_reverse_mask(const Image &image, const MaskProjection &proj) {
  if (proj.pixels.empty()) fail(ErrorCode::NoVisiblePixels, "blur_reverse_mask: empty projection");
  const int w = image.width, h = image.height;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(w) * h, 0);
  for (const auto &[x, y] : proj.pixels) mask[static_cast<std::size_t>(y) * w + x] = 1;
  mask = detail::morph(detail::morph(mask, w, h, kClosingSize, true, 0), w, h, kClosingSize, false, 1);

  const Image blurred = box_blur(image, kBlurSize);
  Image composed = image;
  for (std::size_t p = 0; p < mask.size(); ++p)
    if (!mask[p])
      for (int c = 0; c < 3; ++c) composed.data[3 * p + c] = blurred.data[3 * p + c];

  const PixelRect r =
      centered_square(proj.bbox, blur_square_side(proj.bbox.width(), proj.bbox.height()), w, h);
  if (r.width() < kMinPromptSize || r.height() < kMinPromptSize)
    fail(ErrorCode::DegenerateCrop, "blur square " + std::to_string(r.width()) + "x" + std::to_string(r.height()) +
                                        " is below the minimum size");
  PromptImage p;
  p.pixels = extract(composed, r);
  p.mode = PromptMode::Blur;
  return p;
}

/// Bbox for a segmented render: every masked Gaussian mean in front of the
/// camera and inside the image. Occlusion is irrelevant when only the
/// instance is drawn.
inline MaskProjection project_segmented(const GaussianScene &scene, const InstanceMask &mask, const CameraPose &pose,
                                        const Intrinsics &intr) {
  std::vector<Vec3> means(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) means[i] = scene.gaussians[i].mean;
  return project_mask(mask, means, pose, intr, nullptr, 1.0);
}

inline PromptImage crop_segmented(const Image &segmented_render, const MaskProjection &proj, int pad) {
  PromptImage p = crop(segmented_render, proj, pad);
  p.mode = PromptMode::SegGauss;
  return p;
}

/// Renders only the instance's Gaussians and crops around its projection.
inline PromptImage segmented_gaussian_prompt(const GaussianScene &scene, const InstanceMask &mask,
                                             const CameraPose &pose, const Intrinsics &intr, int pad = 10,
                                             const RenderOptions &opt = {}) {
  if (mask.count() == 0) fail(ErrorCode::EmptyMask, "mask " + std::to_string(mask.instance_id) + " has no points");
  const MaskProjection proj = project_segmented(scene, mask, pose, intr);
  const RenderedImage r = render(scene, pose, intr, &mask, opt);
  PromptImage p = crop_segmented(r.color, proj, pad);
  p.instance_id = mask.instance_id;
  p.pose_id = pose.pose_id;
  return p;
}

/// One source view for prompt generation. Rendered views carry the depth of
/// the full render (crop/blur) or the instance-only render (seggauss).
struct PromptView {
  ViewOrigin origin = ViewOrigin::Dataset;
  CameraPose pose;
  std::string key;
  Image image;
  std::optional<DepthMap> depth; // required for crop/blur
  bool segmented = false;        // image is an instance-only render
};

struct SkippedView {
  ViewOrigin origin = ViewOrigin::Dataset;
  std::string key;
  std::string reason;
};

struct PromptSet {
  std::vector<PromptImage> prompts;
  std::vector<SkippedView> skipped;
};

/// Mode actually applied to a view: dataset photos are never re-rendered, so
/// the segmented-Gaussian mode falls back to cropping on them.
inline PromptMode effective_mode(PromptMode mode, ViewOrigin origin) {
  return (mode == PromptMode::SegGauss && origin == ViewOrigin::Dataset) ? PromptMode::Crop : mode;
}

/// Applies the prompt mode to every view. Views where the instance is not
/// visible (or too small to crop) are skipped and reported.
inline PromptSet build_prompt_set(const InstanceMask &mask, const PointCloud &cloud, const Intrinsics &intr,
                                  double delta, int pad, PromptMode mode, const std::vector<PromptView> &views) {
  if (mask.count() == 0) fail(ErrorCode::EmptyMask, "mask " + std::to_string(mask.instance_id) + " has no points");
  PromptSet set;
  for (const auto &view : views) {
    const PromptMode applied = effective_mode(mode, view.origin);
    try {
      PromptImage p;
      if (view.segmented) {
        const MaskProjection proj = project_mask(mask, cloud.positions, view.pose, intr, nullptr, delta);
        p = crop_segmented(view.image, proj, pad);
      } else {
        if (!view.depth) fail(ErrorCode::MissingStageArtifact, "depth for view " + view.key);
        const MaskProjection proj = project_mask(mask, cloud.positions, view.pose, intr, &*view.depth, delta);
        p = applied == PromptMode::Blur ? blur_reverse_mask(view.image, proj) : crop(view.image, proj, pad);
      }
      p.mode = view.segmented ? PromptMode::SegGauss : applied;
      p.instance_id = mask.instance_id;
      p.pose_id = view.pose.pose_id;
      p.origin = view.origin;
      p.view_key = view.key;
      set.prompts.push_back(std::move(p));
    } catch (const Error &e) {
      if (e.code() != ErrorCode::NoVisiblePixels && e.code() != ErrorCode::DegenerateCrop) throw;
      set.skipped.push_back({view.origin, view.key, e.what()});
    }
  }
  return set;
}

} // namespace nvsp
