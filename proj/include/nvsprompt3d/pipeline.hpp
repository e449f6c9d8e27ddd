// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/eval.hpp>
#include <nvsprompt3d/fusion.hpp>
#include <nvsprompt3d/geometry.hpp>
#include <nvsprompt3d/parallel.hpp>
#include <nvsprompt3d/prompts.hpp>
#include <nvsprompt3d/provider.hpp>
#include <nvsprompt3d/scene_io.hpp>
#include <nvsprompt3d/splat.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nvsp {

/// Manifest path, output directory and CLI overrides for one run.
struct RunConfig {
  fs::path manifest;
  fs::path out;
  std::optional<double> delta;
  std::optional<int> top_k;
  std::optional<int> n_interp;
  std::optional<double> alpha;
  std::optional<PromptMode> prompt_mode;
  std::optional<FusionMode> fusion_mode;
  bool adjust_topk = false;
  int workers = 1;
  std::uint64_t seed = 0;
  std::string provider = "mock";
};

struct StageResult {
  std::string stage;
  double seconds = 0.0;
  std::size_t failed_instances = 0;
};

// Stage artifacts, relative to the output directory.
inline constexpr const char *kSelectArtifact = "select_views.json";
inline constexpr const char *kInterpolateArtifact = "interpolate.json";
inline constexpr const char *kRenderArtifact = "render.json";
inline constexpr const char *kPromptsArtifact = "prompts.json";
inline constexpr const char *kReportArtifact = "report.json";
inline constexpr const char *kMetricsArtifact = "metrics.json";
inline constexpr const char *kInstanceFeatures = "features/instances.fvec";
inline constexpr const char *kQueryFeatures = "features/queries.fvec";

namespace detail {

struct StageContext {
  RunConfig cfg;
  Scene scene;
  PipelineParams params;
};

inline StageContext load_context(const RunConfig &cfg) {
  StageContext ctx{cfg, load_scene(cfg.manifest), {}};
  ctx.params = ctx.scene.params();
  if (cfg.delta) ctx.params.delta = *cfg.delta;
  if (cfg.top_k) ctx.params.top_k = *cfg.top_k;
  if (cfg.n_interp) ctx.params.n_interp = *cfg.n_interp;
  if (cfg.alpha) ctx.params.alpha = *cfg.alpha;
  if (cfg.prompt_mode) ctx.params.prompt_mode = *cfg.prompt_mode;
  if (cfg.fusion_mode) ctx.params.fusion_mode = *cfg.fusion_mode;
  ctx.params.validate();
  fs::create_directories(cfg.out);
  return ctx;
}

inline json params_json(const StageContext &ctx) {
  const auto &p = ctx.params;
  return json{{"delta", p.delta},
              {"top_k", p.top_k},
              {"n_interp", p.n_interp},
              {"alpha", p.alpha},
              {"pad", p.pad},
              {"prompt_mode", to_string(p.prompt_mode)},
              {"fusion_mode", to_string(p.fusion_mode)},
              {"adjust_topk", ctx.cfg.adjust_topk},
              {"seed", ctx.cfg.seed},
              {"provider", ctx.cfg.provider}};
}

inline json read_stage(const StageContext &ctx, const char *artifact) {
  const fs::path p = ctx.cfg.out / artifact;
  if (!fs::exists(p)) fail(ErrorCode::MissingStageArtifact, p.string());
  return read_json(p, ErrorCode::MissingStageArtifact);
}

inline bool instance_ok(const json &inst) { return !inst.contains("error"); }

inline std::vector<Vec3> masked_points(const Scene &s, const InstanceMask &m) {
  std::vector<Vec3> pts;
  for (auto i : m.indices()) pts.push_back(s.cloud.positions[i]);
  return pts;
}

inline const InstanceMask &mask_by_id(const Scene &s, int id) {
  for (const auto &m : s.masks)
    if (m.instance_id == id) return m;
  fail(ErrorCode::SchemaViolation, "masks: unknown instance_id " + std::to_string(id));
}

/// Runs fn over every instance entry of a previous stage on the worker pool.
/// Failed entries pass through unchanged; exceptions from fn become
/// per-instance errors.
inline json map_instances(const StageContext &ctx, const json &previous, std::size_t &failed,
                          const std::function<json(const json &)> &fn) {
  const auto &in = previous.at("instances");
  std::vector<json> out(in.size());
  parallel_for(in.size(), ctx.cfg.workers, [&](std::size_t i) {
    if (!instance_ok(in[i])) {
      out[i] = json{{"instance_id", in[i].at("instance_id")}, {"error", in[i].at("error")}};
      return;
    }
    try {
      out[i] = fn(in[i]);
    } catch (const Error &e) {
      if (e.code() == ErrorCode::IoFailure || e.code() == ErrorCode::ProviderFailure) throw;
      out[i] = json{{"instance_id", in[i].at("instance_id")}, {"error", e.what()}};
    }
  });
  json arr = json::array();
  for (auto &o : out) {
    if (!instance_ok(o)) ++failed;
    arr.push_back(std::move(o));
  }
  return arr;
}

inline CameraPose pose_from_json(const json &j, int id) {
  return CameraPose::from_camera_to_world(pose_matrix_from_json(j, "camera_to_world"), id);
}

template <typename Fn> StageResult timed(const std::string &name, Fn &&fn) {
  const auto start = std::chrono::steady_clock::now();
  StageResult r;
  r.stage = name;
  r.failed_instances = fn();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

} // namespace detail

/// Visibility scores of every instance over every pose, and its top-k poses.
inline StageResult select_views(const RunConfig &cfg) {
  return detail::timed("select-views", [&] {
    const auto ctx = detail::load_context(cfg);
    const Scene &s = ctx.scene;
    std::vector<int> ids;
    for (const auto &m : s.masks) ids.push_back(m.instance_id);
    std::sort(ids.begin(), ids.end());
    json seed_list = json::array();
    for (int id : ids) seed_list.push_back(json{{"instance_id", id}});
    std::size_t failed = 0;
    const json instances = detail::map_instances(ctx, json{{"instances", seed_list}}, failed, [&](const json &e) {
      const auto &mask = detail::mask_by_id(s, e.at("instance_id").get<int>());
      std::vector<VisibilityScore> scores;
      json sj = json::array();
      for (std::size_t p = 0; p < s.poses.size(); ++p) {
        scores.push_back(visibility_score(mask, s.cloud, s.poses[p], s.intrinsics, s.depths[p], ctx.params.delta));
        sj.push_back(json{{"pose_id", scores.back().pose_id}, {"score", scores.back().score}});
      }
      const auto selected = select_top_k(scores, ctx.params.top_k);
      return json{{"instance_id", mask.instance_id}, {"scores", sj}, {"selected", selected}};
    });
    write_json(cfg.out / kSelectArtifact,
               json{{"scene_id", s.manifest.scene_id}, {"params", detail::params_json(ctx)}, {"instances", instances}});
    return failed;
  });
}

/// Geometric-median target per instance, the re-aimed top-k poses (when
/// adjust_topk is set) and the poses interpolated between consecutive
/// selected poses in score order.
inline StageResult interpolate(const RunConfig &cfg) {
  return detail::timed("interpolate", [&] {
    const auto ctx = detail::load_context(cfg);
    const Scene &s = ctx.scene;
    const json prev = detail::read_stage(ctx, kSelectArtifact);
    std::size_t failed = 0;
    const json instances = detail::map_instances(ctx, prev, failed, [&](const json &e) {
      const auto &mask = detail::mask_by_id(s, e.at("instance_id").get<int>());
      const auto pts = detail::masked_points(s, mask);
      const Vec3 target = geometric_median(pts);
      const auto selected = e.at("selected").get<std::vector<int>>();
      json adjusted = json::array(), interp = json::array(), skipped = json::array();
      if (ctx.cfg.adjust_topk) {
        for (int id : selected) {
          const CameraPose p = look_at(s.poses[s.pose_index(id)], target);
          adjusted.push_back(json{{"pose_id", id}, {"key", std::to_string(id)},
                                  {"camera_to_world", pose_matrix_json(p.camera_to_world())}});
        }
      }
      if (ctx.params.n_interp > 0) {
        const auto schedule = interpolation_schedule(ctx.params.n_interp);
        for (std::size_t i = 0; i + 1 < selected.size(); ++i) {
          const CameraPose &a = s.poses[s.pose_index(selected[i])];
          const CameraPose &b = s.poses[s.pose_index(selected[i + 1])];
          try {
            const auto poses = interpolate_poses(a, b, target, ctx.params.n_interp);
            for (std::size_t n = 0; n < poses.size(); ++n) {
              const std::string key =
                  std::to_string(a.pose_id) + "-" + std::to_string(b.pose_id) + "-" + std::to_string(n + 1);
              interp.push_back(json{{"from", a.pose_id}, {"to", b.pose_id}, {"step", n + 1}, {"t", schedule[n]},
                                    {"key", key}, {"camera_to_world", pose_matrix_json(poses[n].camera_to_world())}});
            }
          } catch (const Error &err) {
            skipped.push_back(json{{"from", a.pose_id}, {"to", b.pose_id}, {"reason", err.what()}});
          }
        }
      }
      return json{{"instance_id", mask.instance_id},
                  {"selected", selected},
                  {"target", {target.x(), target.y(), target.z()}},
                  {"adjusted", adjusted},
                  {"interpolated", interp},
                  {"skipped", skipped}};
    });
    write_json(cfg.out / kInterpolateArtifact,
               json{{"scene_id", s.manifest.scene_id}, {"params", detail::params_json(ctx)}, {"instances", instances}});
    return failed;
  });
}

/// Splat renders for every adjusted and interpolated view. Segmented-Gaussian
/// mode renders only the instance; the other modes render the full scene
/// and keep its depth for mask projection.
inline StageResult render_views(const RunConfig &cfg) {
  return detail::timed("render", [&] {
    const auto ctx = detail::load_context(cfg);
    const Scene &s = ctx.scene;
    const json prev = detail::read_stage(ctx, kInterpolateArtifact);
    const GaussianScene gaussians = init_from_pointcloud(s.cloud, ctx.cfg.workers);
    const bool segmented = ctx.params.prompt_mode == PromptMode::SegGauss;
    std::size_t failed = 0;
    const json instances = detail::map_instances(ctx, prev, failed, [&](const json &e) {
      const auto &mask = detail::mask_by_id(s, e.at("instance_id").get<int>());
      const fs::path rel_dir = fs::path("renders") / std::to_string(mask.instance_id);
      fs::create_directories(ctx.cfg.out / rel_dir);
      json views = json::array();
      auto emit = [&](const json &v, ViewOrigin origin, int pose_id) {
        const CameraPose pose = detail::pose_from_json(v.at("camera_to_world"), pose_id);
        const std::string stem = to_string(origin) + "_" + v.at("key").get<std::string>();
        const RenderedImage r = render(gaussians, pose, s.intrinsics, segmented ? &mask : nullptr);
        const fs::path image = rel_dir / (stem + (segmented ? "_segmented.png" : ".png"));
        write_png(ctx.cfg.out / image, r.color);
        json view{{"origin", to_string(origin)}, {"key", v.at("key")},       {"pose_id", pose_id},
                  {"image", image.generic_string()}, {"segmented", segmented}, {"camera_to_world", v.at("camera_to_world")}};
        if (!segmented) {
          const fs::path depth = rel_dir / (stem + ".dmap");
          write_depth(ctx.cfg.out / depth, rendered_depth(r, pose_id));
          view["depth"] = depth.generic_string();
        }
        views.push_back(std::move(view));
      };
      for (const auto &v : e.at("adjusted")) emit(v, ViewOrigin::Adjusted, v.at("pose_id").get<int>());
      for (const auto &v : e.at("interpolated")) emit(v, ViewOrigin::Interpolated, v.at("step").get<int>());
      return json{{"instance_id", mask.instance_id}, {"selected", e.at("selected")}, {"views", views}};
    });
    write_json(cfg.out / kRenderArtifact,
               json{{"scene_id", s.manifest.scene_id}, {"params", detail::params_json(ctx)}, {"instances", instances}});
    return failed;
  });
}

/// Hard visual prompts per instance: dataset photos of the selected poses
/// (unless re-aimed) plus every rendered view.
inline StageResult make_prompts(const RunConfig &cfg) {
  return detail::timed("prompts", [&] {
    const auto ctx = detail::load_context(cfg);
    const Scene &s = ctx.scene;
    const json prev = detail::read_stage(ctx, kRenderArtifact);
    std::size_t failed = 0;
    const json instances = detail::map_instances(ctx, prev, failed, [&](const json &e) {
      const auto &mask = detail::mask_by_id(s, e.at("instance_id").get<int>());
      std::vector<PromptView> views;
      if (!ctx.cfg.adjust_topk) {
        for (int id : e.at("selected").get<std::vector<int>>()) {
          const std::size_t pi = s.pose_index(id);
          PromptView v;
          v.origin = ViewOrigin::Dataset;
          v.pose = s.poses[pi];
          v.key = std::to_string(id);
          v.image = s.image(id);
          v.depth = s.depths[pi];
          views.push_back(std::move(v));
        }
      }
      for (const auto &rv : e.at("views")) {
        PromptView v;
        v.origin = rv.at("origin") == "adjusted" ? ViewOrigin::Adjusted : ViewOrigin::Interpolated;
        v.pose = detail::pose_from_json(rv.at("camera_to_world"), rv.at("pose_id").get<int>());
        v.key = rv.at("key").get<std::string>();
        const fs::path image = ctx.cfg.out / rv.at("image").get<std::string>();
        if (!fs::exists(image)) fail(ErrorCode::MissingStageArtifact, image.string());
        v.image = read_png(image);
        v.segmented = rv.at("segmented").get<bool>();
        if (rv.contains("depth")) {
          const fs::path depth = ctx.cfg.out / rv.at("depth").get<std::string>();
          if (!fs::exists(depth)) fail(ErrorCode::MissingStageArtifact, depth.string());
          v.depth = read_depth(depth, v.pose.pose_id);
        }
        if (!v.segmented && !v.depth) fail(ErrorCode::MissingStageArtifact, "depth for view " + v.key);
        views.push_back(std::move(v));
      }
      const PromptSet set =
          build_prompt_set(mask, s.cloud, s.intrinsics, ctx.params.delta, ctx.params.pad, ctx.params.prompt_mode, views);
      const fs::path rel_dir = fs::path("prompts") / std::to_string(mask.instance_id);
      fs::create_directories(ctx.cfg.out / rel_dir);
      json prompts = json::array(), skipped = json::array();
      for (const auto &p : set.prompts) {
        const fs::path file = rel_dir / p.file_name();
        write_png(ctx.cfg.out / file, p.pixels);
        prompts.push_back(json{{"file", file.generic_string()}, {"origin", to_string(p.origin)}, {"view", p.view_key},
                               {"pose_id", p.pose_id}, {"mode", to_string(p.mode)}});
      }
      for (const auto &sk : set.skipped)
        skipped.push_back(json{{"origin", to_string(sk.origin)}, {"view", sk.key}, {"reason", sk.reason}});
      return json{{"instance_id", mask.instance_id}, {"prompts", prompts}, {"skipped", skipped}};
    });
    write_json(cfg.out / kPromptsArtifact,
               json{{"scene_id", s.manifest.scene_id}, {"params", detail::params_json(ctx)}, {"instances", instances}});
    return failed;
  });
}

inline Eigen::MatrixXd stack_rows(const std::vector<FeatureVector> &rows, Eigen::Index dim) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r].transpose();
  return m;
}

/// Embeds the scene's queries: reference images through the provider,
/// inline vectors as given, or a precomputed feature file whose sidecar
/// "<file>.json" lists the labels.
inline std::pair<std::vector<std::string>, Eigen::MatrixXd> embed_queries(const Scene &s, EmbeddingProvider &provider) {
  std::vector<std::string> labels;
  std::vector<FeatureVector> rows;
  for (const auto &q : s.manifest.queries) {
    labels.push_back(q.label);
    if (!q.image.empty()) {
      rows.push_back(provider.embed_file(q.image));
    } else {
      rows.push_back(Eigen::Map<const FeatureVector>(q.vector.data(), static_cast<Eigen::Index>(q.vector.size())));
    }
  }
  Eigen::MatrixXd m = stack_rows(rows, provider.dimension());
  if (s.manifest.query_features) {
    const Eigen::MatrixXd extra = read_features(*s.manifest.query_features);
    const auto keys = read_feature_index(s.manifest.query_features->string() + ".json");
    if (static_cast<Eigen::Index>(keys.size()) != extra.rows())
      fail(ErrorCode::DimensionMismatch, "query_features: index lists " + std::to_string(keys.size()) + " keys for " +
                                             std::to_string(extra.rows()) + " rows");
    if (m.rows() > 0 && extra.cols() != m.cols())
      fail(ErrorCode::DimensionMismatch, "query_features: dimension does not match provider");
    Eigen::MatrixXd all(m.rows() + extra.rows(), extra.cols());
    if (m.rows() > 0) all.topRows(m.rows()) = m;
    all.bottomRows(extra.rows()) = extra;
    m = std::move(all);
    labels.insert(labels.end(), keys.begin(), keys.end());
  }
  if (labels.empty()) fail(ErrorCode::SchemaViolation, "queries: manifest defines no queries");
  return {labels, m};
}

/// Embeds every prompt, fuses per instance (WFB or plain averaging), labels
/// instances by their best-matching query and writes the run report.
inline StageResult fuse(const RunConfig &cfg) {
  return detail::timed("fuse", [&] {
    const auto ctx = detail::load_context(cfg);
    const Scene &s = ctx.scene;
    const json prev = detail::read_stage(ctx, kPromptsArtifact);
    const json selection = detail::read_stage(ctx, kSelectArtifact);
    const json interp = detail::read_stage(ctx, kInterpolateArtifact);
    auto provider = make_provider(ctx.cfg.provider);
    const auto [labels, queries] = embed_queries(s, *provider);

    const auto &entries = prev.at("instances");
    std::vector<std::optional<FeatureVector>> fused(entries.size());
    std::vector<std::string> errors(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto &e = entries[i];
      if (!detail::instance_ok(e)) {
        errors[i] = e.at("error").get<std::string>();
        continue;
      }
      FusionInput in;
      in.n_interp = ctx.params.n_interp;
      in.alpha = ctx.params.alpha;
      std::vector<FeatureVector> all;
      for (const auto &p : e.at("prompts")) {
        const fs::path file = ctx.cfg.out / p.at("file").get<std::string>();
        if (!fs::exists(file)) fail(ErrorCode::MissingStageArtifact, file.string());
        FeatureVector f = provider->embed_file(file);
        (p.at("origin") == "interpolated" ? in.interp : in.top_k).push_back(f);
        all.push_back(std::move(f));
      }
      try {
        fused[i] = ctx.params.fusion_mode == FusionMode::Wfb ? wfb_fuse(in) : average_fuse(all);
      } catch (const Error &err) {
        errors[i] = err.what();
      }
    }

    std::vector<FeatureVector> rows;
    std::vector<std::string> keys;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (fused[i]) {
        rows.push_back(*fused[i]);
        keys.push_back(std::to_string(entries[i].at("instance_id").get<int>()));
      }
    const Eigen::MatrixXd inst = stack_rows(rows, queries.cols());
    const QueryMatch match = match_queries(inst, queries);

    fs::create_directories(cfg.out / "features");
    write_features(cfg.out / kInstanceFeatures, inst);
    write_feature_index(cfg.out / (std::string(kInstanceFeatures) + ".json"), keys, inst.cols());
    write_features(cfg.out / kQueryFeatures, queries);
    write_feature_index(cfg.out / (std::string(kQueryFeatures) + ".json"), labels, queries.cols());

    auto find_by_id = [](const json &stage, int id) -> const json & {
      for (const auto &x : stage.at("instances"))
        if (x.at("instance_id") == id) return x;
      fail(ErrorCode::MissingStageArtifact, "instance " + std::to_string(id) + " missing from an earlier stage");
    };
    json report = json::array();
    std::size_t failed = 0, row = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const int id = entries[i].at("instance_id").get<int>();
      json r{{"instance_id", id}};
      if (!fused[i]) {
        r["error"] = errors[i];
        ++failed;
        report.push_back(std::move(r));
        continue;
      }
      const json &sel = find_by_id(selection, id);
      const json &ip = find_by_id(interp, id);
      r["scores"] = sel.at("scores");
      r["selected"] = sel.at("selected");
      r["target"] = ip.at("target");
      json poses = json::array();
      for (const auto &v : ip.at("interpolated"))
        poses.push_back(json{{"key", v.at("key")}, {"camera_to_world", v.at("camera_to_world")}});
      r["interpolated"] = poses;
      json skipped = entries[i].at("skipped");
      for (const auto &sk : ip.at("skipped")) skipped.push_back(sk);
      r["skipped_views"] = skipped;
      r["prompts"] = entries[i].at("prompts").size();
      r["feature_file"] = kInstanceFeatures;
      r["feature_row"] = row;
      r["label"] = labels[match.labels[row]];
      r["label_index"] = match.labels[row];
      r["similarity"] = match.confidence[row];
      std::vector<double> sims(match.similarity.cols());
      for (Eigen::Index q = 0; q < match.similarity.cols(); ++q) sims[q] = match.similarity(row, q);
      r["similarities"] = sims;
      ++row;
      report.push_back(std::move(r));
    }
    write_json(cfg.out / kReportArtifact, json{{"scene_id", s.manifest.scene_id},
                                               {"params", detail::params_json(ctx)},
                                               {"queries", labels},
                                               {"instances", report}});
    return failed;
  });
}

/// Predictions from the report (the instance masks with their labels and
/// best similarity) scored against the manifest's ground truth.
inline StageResult evaluate(const RunConfig &cfg) {
  return detail::timed("eval", [&] {
    const auto ctx = detail::load_context(cfg);
    const Scene &s = ctx.scene;
    const json report = detail::read_stage(ctx, kReportArtifact);
    std::vector<Prediction> preds;
    for (const auto &r : report.at("instances")) {
      if (!detail::instance_ok(r)) continue;
      const auto &mask = detail::mask_by_id(s, r.at("instance_id").get<int>());
      preds.push_back(Prediction{mask.instance_id, mask.indices(), r.at("label").get<std::string>(),
                                 r.at("similarity").get<double>()});
    }
    write_json(cfg.out / kMetricsArtifact, metrics_report(s.manifest.scene_id, preds, s.ground_truth));
    return std::size_t{0};
  });
}

/// All stages in order, each reading its predecessor's artifacts from disk;
/// `eval` runs only when the manifest names ground truth.
inline std::vector<StageResult> run(const RunConfig &cfg) {
  std::vector<StageResult> out;
  out.push_back(select_views(cfg));
  out.push_back(interpolate(cfg));
  out.push_back(render_views(cfg));
  out.push_back(make_prompts(cfg));
  out.push_back(fuse(cfg));
  const SceneManifest m = parse_manifest(read_json(cfg.manifest), cfg.manifest);
  if (m.ground_truth) out.push_back(evaluate(cfg));
  return out;
}

/// Stage timings go to their own file so every other artifact stays
/// byte-reproducible.
inline void write_timings(const fs::path &out, const std::vector<StageResult> &results) {
  const fs::path path = out / "timings.json";
  json t = fs::exists(path) ? read_json(path) : json::object();
  for (const auto &r : results) t[r.stage] = r.seconds;
  write_json(path, t);
}

} // namespace nvsp
