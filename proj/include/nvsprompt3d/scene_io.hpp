// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/image_io.hpp>
#include <nvsprompt3d/ply.hpp>
#include <nvsprompt3d/types.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nvsp {

using json = nlohmann::json;
namespace fs = std::filesystem;

enum class PromptMode { Crop, Blur, SegGauss };
enum class FusionMode { Wfb, Average };

inline std::string to_string(PromptMode m) {
  switch (m) {
  case PromptMode::Crop: return "crop";
  case PromptMode::Blur: return "blur";
  case PromptMode::SegGauss: return "seggauss";
  }
  return "crop";
}

inline std::string to_string(FusionMode m) { return m == FusionMode::Wfb ? "wfb" : "average"; }

inline PromptMode parse_prompt_mode(const std::string &s) {
  if (s == "crop") return PromptMode::Crop;
  if (s == "blur") return PromptMode::Blur;
  if (s == "seggauss") return PromptMode::SegGauss;
  fail(ErrorCode::SchemaViolation, "prompt_mode: '" + s + "' is not one of crop|blur|seggauss");
}

inline FusionMode parse_fusion_mode(const std::string &s) {
  if (s == "wfb") return FusionMode::Wfb;
  if (s == "average") return FusionMode::Average;
  fail(ErrorCode::SchemaViolation, "fusion_mode: '" + s + "' is not one of wfb|average");
}

/// Tunable pipeline parameters carried by the manifest and overridable on the CLI.
struct PipelineParams {
  double delta = 0.4;
  int top_k = 15;
  int n_interp = 1;
  double alpha = 0.5;
  PromptMode prompt_mode = PromptMode::SegGauss;
  FusionMode fusion_mode = FusionMode::Wfb;
  int pad = 10;

  void validate() const {
    if (!(delta > 0.0) || !std::isfinite(delta)) fail(ErrorCode::SchemaViolation, "delta: must be > 0");
    if (top_k < 1) fail(ErrorCode::SchemaViolation, "top_k: must be >= 1");
    if (n_interp < 0) fail(ErrorCode::SchemaViolation, "n_interp: must be >= 0");
    if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorCode::SchemaViolation, "alpha: must lie in (0, 1]");
    if (pad < 0) fail(ErrorCode::SchemaViolation, "pad: must be >= 0");
  }
};

/// A text/class query, embedded either from a reference image or supplied as
/// a precomputed vector.
struct Query {
  std::string label;
  fs::path image;
  std::vector<double> vector;
};

struct GroundTruthInstance {
  std::string label;
  std::vector<std::size_t> indices;
};

struct SceneManifest {
  fs::path manifest_path;
  fs::path point_cloud, masks, poses, intrinsics, depth_dir, image_dir;
  std::optional<fs::path> ground_truth;
  std::optional<fs::path> query_features;
  std::string scene_id = "scene";
  std::vector<Query> queries;
  PipelineParams params;

  fs::path depth_path(int pose_id) const { return depth_dir / (std::to_string(pose_id) + ".dmap"); }
  fs::path image_path(int pose_id) const { return image_dir / (std::to_string(pose_id) + ".png"); }
};

struct Scene {
  SceneManifest manifest;
  PointCloud cloud;
  std::vector<InstanceMask> masks;
  std::vector<CameraPose> poses;
  std::vector<DepthMap> depths; // index-aligned with poses
  Intrinsics intrinsics;
  std::vector<GroundTruthInstance> ground_truth;

  const PipelineParams &params() const { return manifest.params; }

  std::size_t pose_index(int pose_id) const {
    for (std::size_t i = 0; i < poses.size(); ++i)
      if (poses[i].pose_id == pose_id) return i;
    fail(ErrorCode::SchemaViolation, "poses: unknown pose_id " + std::to_string(pose_id));
  }

  Image image(int pose_id) const { return read_png(manifest.image_path(pose_id)); }
};

namespace detail {

inline json read_json_file(const fs::path &path, const std::string &field) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::MissingFile, field + ": cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    fail(ErrorCode::SchemaViolation, field + ": invalid JSON in " + path.string() + " (" + e.what() + ")");
  }
}

inline const json &require(const json &obj, const std::string &key, const std::string &where) {
  if (!obj.is_object() || !obj.contains(key)) fail(ErrorCode::SchemaViolation, where + key + ": missing");
  return obj.at(key);
}

inline std::string require_string(const json &obj, const std::string &key, const std::string &where = "") {
  const auto &v = require(obj, key, where);
  if (!v.is_string()) fail(ErrorCode::SchemaViolation, where + key + ": expected string");
  return v.get<std::string>();
}

inline double require_number(const json &obj, const std::string &key, const std::string &where = "") {
  const auto &v = require(obj, key, where);
  if (!v.is_number()) fail(ErrorCode::SchemaViolation, where + key + ": expected number");
  return v.get<double>();
}

inline long long require_integer(const json &obj, const std::string &key, const std::string &where = "") {
  const auto &v = require(obj, key, where);
  if (!v.is_number_integer()) fail(ErrorCode::SchemaViolation, where + key + ": expected integer");
  return v.get<long long>();
}

inline std::vector<std::size_t> index_list(const json &v, const std::string &where) {
  if (!v.is_array()) fail(ErrorCode::SchemaViolation, where + ": expected array of indices");
  std::vector<std::size_t> out;
  out.reserve(v.size());
  for (const auto &e : v) {
    if (!e.is_number_integer() || e.get<long long>() < 0)
      fail(ErrorCode::SchemaViolation, where + ": indices must be non-negative integers");
    out.push_back(e.get<std::size_t>());
  }
  return out;
}

} // namespace detail

inline void write_json(const fs::path &path, const json &j) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoFailure, "cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) fail(ErrorCode::IoFailure, "short write to " + path.string());
}

inline json read_json(const fs::path &path, ErrorCode missing = ErrorCode::MissingFile) {
  std::ifstream in(path);
  if (!in) fail(missing, path.string());
  try {
    return json::parse(in);
  } catch (const json::exception &e) {
    fail(ErrorCode::SchemaViolation, "invalid JSON in " + path.string() + " (" + e.what() + ")");
  }
}

inline json pose_matrix_json(const Mat4 &m) {
  json a = json::array();
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a.push_back(m(r, c));
  return a;
}

inline Mat4 pose_matrix_from_json(const json &a, const std::string &where) {
  if (!a.is_array() || a.size() != 16) fail(ErrorCode::SchemaViolation, where + ": expected 16 row-major numbers");
  Mat4 m;
  for (int i = 0; i < 16; ++i) {
    if (!a[i].is_number()) fail(ErrorCode::SchemaViolation, where + ": non-numeric entry");
    m(i / 4, i % 4) = a[i].get<double>();
  }
  const Eigen::RowVector4d last(0, 0, 0, 1);
  if ((m.row(3) - last).cwiseAbs().maxCoeff() > 1e-12)
    fail(ErrorCode::SchemaViolation, where + ": last row must be [0 0 0 1]");
  return m;
}

// Sidecar index for feature files: {"dimension": D, "keys": [row keys...]}.

inline void write_feature_index(const fs::path &path, const std::vector<std::string> &keys, Eigen::Index dimension) {
  write_json(path, json{{"dimension", dimension}, {"keys", keys}});
}

inline std::vector<std::string> read_feature_index(const fs::path &path) {
  const json j = detail::read_json_file(path, "feature_index");
  const auto &keys = detail::require(j, "keys", "feature_index.");
  if (!keys.is_array()) fail(ErrorCode::SchemaViolation, "feature_index.keys: expected array");
  std::vector<std::string> out;
  for (const auto &k : keys) {
    if (!k.is_string()) fail(ErrorCode::SchemaViolation, "feature_index.keys: expected strings");
    out.push_back(k.get<std::string>());
  }
  return out;
}

inline Intrinsics parse_intrinsics(const json &j) {
  Intrinsics k;
  k.fx = detail::require_number(j, "fx", "intrinsics.");
  k.fy = detail::require_number(j, "fy", "intrinsics.");
  k.cx = detail::require_number(j, "cx", "intrinsics.");
  k.cy = detail::require_number(j, "cy", "intrinsics.");
  k.width = static_cast<int>(detail::require_integer(j, "width", "intrinsics."));
  k.height = static_cast<int>(detail::require_integer(j, "height", "intrinsics."));
  k.validate();
  return k;
}

inline json intrinsics_json(const Intrinsics &k) {
  return json{{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

/// Parses and validates the manifest itself (no referenced files are read).
inline SceneManifest parse_manifest(const json &j, const fs::path &manifest_path) {
  using namespace detail;
  if (!j.is_object()) fail(ErrorCode::SchemaViolation, "manifest: expected JSON object");
  SceneManifest m;
  m.manifest_path = manifest_path;
  const fs::path base = manifest_path.parent_path();
  auto path_field = [&](const std::string &key) { return base / require_string(j, key); };
  m.point_cloud = path_field("point_cloud");
  m.masks = path_field("masks");
  m.poses = path_field("poses");
  m.intrinsics = path_field("intrinsics");
  m.depth_dir = path_field("depth_dir");
  m.image_dir = path_field("image_dir");

  PipelineParams &p = m.params;
  p.delta = require_number(j, "delta");
  const auto top_k = require_integer(j, "top_k");
  const auto n_interp = require_integer(j, "n_interp");
  p.top_k = static_cast<int>(top_k);
  p.n_interp = static_cast<int>(n_interp);
  p.alpha = require_number(j, "alpha");
  p.prompt_mode = parse_prompt_mode(require_string(j, "prompt_mode"));
  p.fusion_mode = parse_fusion_mode(require_string(j, "fusion_mode"));
  if (j.contains("pad")) p.pad = static_cast<int>(require_integer(j, "pad"));
  p.validate();

  if (j.contains("scene_id")) m.scene_id = require_string(j, "scene_id");
  if (j.contains("ground_truth")) m.ground_truth = path_field("ground_truth");
  if (j.contains("query_features")) m.query_features = path_field("query_features");
  if (j.contains("queries")) {
    const auto &qs = j.at("queries");
    if (!qs.is_array()) fail(ErrorCode::SchemaViolation, "queries: expected array");
    for (std::size_t i = 0; i < qs.size(); ++i) {
      const std::string where = "queries[" + std::to_string(i) + "].";
      Query q;
      q.label = require_string(qs[i], "label", where);
      if (qs[i].contains("image")) {
        q.image = base / require_string(qs[i], "image", where);
      } else if (qs[i].contains("vector")) {
        const auto &v = qs[i].at("vector");
        if (!v.is_array() || v.empty()) fail(ErrorCode::SchemaViolation, where + "vector: expected numbers");
        for (const auto &x : v) {
          if (!x.is_number()) fail(ErrorCode::SchemaViolation, where + "vector: expected numbers");
          q.vector.push_back(x.get<double>());
        }
      } else {
        fail(ErrorCode::SchemaViolation, where + "image: missing (or give 'vector')");
      }
      m.queries.push_back(std::move(q));
    }
  }
  return m;
}

inline std::vector<std::pair<int, Mat4>> parse_pose_list(const json &j) {
  if (!j.is_array() || j.empty()) fail(ErrorCode::SchemaViolation, "poses: expected non-empty array");
  std::vector<std::pair<int, Mat4>> out;
  std::set<int> seen;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = "poses[" + std::to_string(i) + "].";
    const int id = static_cast<int>(detail::require_integer(j[i], "pose_id", where));
    if (!seen.insert(id).second) fail(ErrorCode::SchemaViolation, where + "pose_id: duplicate " + std::to_string(id));
    out.emplace_back(id, pose_matrix_from_json(detail::require(j[i], "camera_to_world", where), where + "camera_to_world"));
  }
  return out;
}

/// Loads the manifest and every file it references. Either the returned
/// Scene satisfies all type invariants and cross-references or an Error
/// naming the offending field is thrown.
inline Scene load_scene(const fs::path &manifest_path) {
  using namespace detail;
  Scene s;
  s.manifest = parse_manifest(read_json_file(manifest_path, "manifest"), manifest_path);
  const SceneManifest &m = s.manifest;

  s.cloud = load_ply(m.point_cloud);
  s.intrinsics = parse_intrinsics(read_json_file(m.intrinsics, "intrinsics"));

  const json masks = read_json_file(m.masks, "masks");
  if (!masks.is_array() || masks.empty()) fail(ErrorCode::SchemaViolation, "masks: expected non-empty array");
  std::set<int> mask_ids;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const std::string where = "masks[" + std::to_string(i) + "].";
    const int id = static_cast<int>(require_integer(masks[i], "instance_id", where));
    if (!mask_ids.insert(id).second) fail(ErrorCode::SchemaViolation, where + "instance_id: duplicate");
    auto mask = InstanceMask::from_indices(id, s.cloud.size(), index_list(require(masks[i], "indices", where), where + "indices"));
    if (mask.count() == 0) fail(ErrorCode::SchemaViolation, where + "indices: mask has no points");
    s.masks.push_back(std::move(mask));
  }

  for (const auto &[id, c2w] : parse_pose_list(read_json_file(m.poses, "poses"))) {
    CameraPose pose = CameraPose::from_camera_to_world(c2w, id);
    pose.validate();
    s.poses.push_back(pose);
    DepthMap depth = read_depth(m.depth_path(id), id);
    if (depth.width != s.intrinsics.width || depth.height != s.intrinsics.height)
      fail(ErrorCode::DimensionMismatch, "depth[" + std::to_string(id) + "]: " + std::to_string(depth.width) + "x" +
                                             std::to_string(depth.height) + " does not match intrinsics");
    s.depths.push_back(std::move(depth));
    if (!fs::exists(m.image_path(id)))
      fail(ErrorCode::MissingFile, "image[" + std::to_string(id) + "]: " + m.image_path(id).string());
  }

  for (const auto &q : m.queries)
    if (!q.image.empty() && !fs::exists(q.image))
      fail(ErrorCode::MissingFile, "queries." + q.label + ".image: " + q.image.string());

  if (m.ground_truth) {
    const json gt = read_json_file(*m.ground_truth, "ground_truth");
    if (!gt.is_array()) fail(ErrorCode::SchemaViolation, "ground_truth: expected array");
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const std::string where = "ground_truth[" + std::to_string(i) + "].";
      GroundTruthInstance g;
      g.label = require_string(gt[i], "label", where);
      g.indices = index_list(require(gt[i], "indices", where), where + "indices");
      for (auto idx : g.indices)
        if (idx >= s.cloud.size()) fail(ErrorCode::DimensionMismatch, where + "indices: index out of range");
      s.ground_truth.push_back(std::move(g));
    }
  }
  return s;
}

} // namespace nvsp
