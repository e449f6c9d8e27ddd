// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#include "support.hpp"

#include <nvsprompt3d/pipeline.hpp>
#include <nvsprompt3d/ply.hpp>
#include <nvsprompt3d/synthetic.hpp>

#include <cstdlib>
#include <map>

using namespace nvsp;
using nvsp::test::slurp;
using nvsp::test::TempDir;

#ifndef NVSP_CLI
#error "NVSP_CLI must name the command-line tool"
#endif

namespace {

PipelineParams small_params() {
  PipelineParams p;
  p.top_k = 2;
  p.n_interp = 1;
  return p;
}

fs::path three_box_scene(const TempDir &dir, const PipelineParams &params = small_params(), std::uint64_t seed = 1) {
  return write_synthetic_scene(dir.path() / "scene", make_synthetic_scene(seed, 3, 400, 12), params);
}

RunConfig config(const fs::path &manifest, const fs::path &out) {
  RunConfig c;
  c.manifest = manifest;
  c.out = out;
  return c;
}

// Every output file except the timing log, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path &root) {
  std::map<std::string, std::string> files;
  for (const auto &e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "timings.json") continue;
    files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
  }
  return files;
}

int cli(const std::string &args) {
  const int status = std::system((std::string(NVSP_CLI) + " " + args + " 2>/dev/null").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

} // namespace

TEST(Pipeline, ThreeBoxesLabeledByColor) {
  TempDir dir("pipe");
  const RunConfig cfg = config(three_box_scene(dir), dir / "run");
  const auto results = run(cfg);
  ASSERT_EQ(results.size(), 6u);
  for (const auto &r : results) EXPECT_EQ(r.failed_instances, 0u) << r.stage;
  const json report = read_json(cfg.out / kReportArtifact);
  const Scene scene = load_scene(cfg.manifest);
  ASSERT_EQ(report["instances"].size(), 3u);
  for (const auto &inst : report["instances"]) {
    const int id = inst["instance_id"];
    EXPECT_EQ(inst["label"], scene.ground_truth[id].label);
    EXPECT_GT(inst["similarity"].get<double>(), 0.9);
    EXPECT_EQ(inst["selected"].size(), 2u);
    EXPECT_EQ(inst["interpolated"].size(), 1u);
    EXPECT_EQ(inst["prompts"], 3);
    EXPECT_TRUE(fs::exists(cfg.out / inst["feature_file"].get<std::string>()));
  }
  const json metrics = read_json(cfg.out / kMetricsArtifact);
  EXPECT_EQ(metrics["AP"], 1.0);
  EXPECT_EQ(metrics["AP50"], 1.0);
  EXPECT_EQ(metrics["AP25"], 1.0);
  const Eigen::MatrixXd f = read_features(cfg.out / kInstanceFeatures);
  EXPECT_EQ(f.rows(), 3);
  EXPECT_EQ(read_feature_index(cfg.out / (std::string(kInstanceFeatures) + ".json")),
            (std::vector<std::string>{"0", "1", "2"}));
}

TEST(Pipeline, ReportReferencesWrittenFiles) {
  TempDir dir("pipe");
  const RunConfig cfg = config(three_box_scene(dir), dir / "run");
  run(cfg);
  const json prompts = read_json(cfg.out / kPromptsArtifact);
  for (const auto &inst : prompts["instances"])
    for (const auto &p : inst["prompts"]) EXPECT_TRUE(fs::exists(cfg.out / p["file"].get<std::string>()));
  const json renders = read_json(cfg.out / kRenderArtifact);
  for (const auto &inst : renders["instances"])
    for (const auto &v : inst["views"]) EXPECT_TRUE(fs::exists(cfg.out / v["image"].get<std::string>()));
}

TEST(Pipeline, StagedEqualsMonolithic) {
  TempDir dir("pipe");
  const fs::path manifest = three_box_scene(dir);
  const RunConfig mono = config(manifest, dir / "mono"), staged = config(manifest, dir / "staged");
  run(mono);
  select_views(staged);
  interpolate(staged);
  EXPECT_EQ(slurp(staged.out / kSelectArtifact), slurp(mono.out / kSelectArtifact));
  EXPECT_EQ(slurp(staged.out / kInterpolateArtifact), slurp(mono.out / kInterpolateArtifact));
  render_views(staged);
  make_prompts(staged);
  fuse(staged);
  evaluate(staged);
  EXPECT_EQ(tree(staged.out), tree(mono.out));
}

TEST(Pipeline, WorkerCountDoesNotChangeBytes) {
  TempDir dir("pipe");
  const fs::path manifest = three_box_scene(dir);
  RunConfig one = config(manifest, dir / "w1"), many = config(manifest, dir / "w4");
  many.workers = 4;
  run(one);
  run(many);
  EXPECT_EQ(tree(one.out), tree(many.out));
}

TEST(Pipeline, SingleViewHasNoInterpolation) {
  TempDir dir("pipe");
  RunConfig cfg = config(three_box_scene(dir), dir / "run");
  cfg.top_k = 1;
  run(cfg);
  const json report = read_json(cfg.out / kReportArtifact);
  const Eigen::MatrixXd fused = read_features(cfg.out / kInstanceFeatures);
  MockProvider mock;
  std::size_t row = 0;
  for (const auto &inst : report["instances"]) {
    EXPECT_EQ(inst["interpolated"].size(), 0u);
    EXPECT_EQ(inst["prompts"], 1);
    const std::string file = read_json(cfg.out / kPromptsArtifact)["instances"][row]["prompts"][0]["file"];
    const FeatureVector top1 = mock.embed_file(cfg.out / file);
    EXPECT_LT((fused.row(static_cast<Eigen::Index>(row)).transpose() - top1).norm(), 1e-12);
    ++row;
  }
}

TEST(Pipeline, ZeroInterpolationSkipsStage) {
  TempDir dir("pipe");
  const fs::path manifest = three_box_scene(dir);
  RunConfig zero = config(manifest, dir / "zero");
  zero.n_interp = 0;
  zero.fusion_mode = FusionMode::Wfb;
  RunConfig avg = zero;
  avg.out = dir / "avg";
  avg.fusion_mode = FusionMode::Average;
  run(zero);
  run(avg);
  const json a = read_json(zero.out / kReportArtifact), b = read_json(avg.out / kReportArtifact);
  for (std::size_t i = 0; i < a["instances"].size(); ++i) {
    EXPECT_EQ(a["instances"][i]["interpolated"].size(), 0u);
    EXPECT_EQ(a["instances"][i]["label"], b["instances"][i]["label"]);
    EXPECT_NEAR(a["instances"][i]["similarity"].get<double>(), b["instances"][i]["similarity"].get<double>(), 1e-9);
  }
  EXPECT_FALSE(fs::exists(zero.out / "renders" / "0" / "interpolated_0-1-1_segmented.png"));
  const Eigen::MatrixXd fa = read_features(zero.out / kInstanceFeatures), fb = read_features(avg.out / kInstanceFeatures);
  EXPECT_LT((fa - fb).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Pipeline, PromptModesAndAdjustedViews) {
  TempDir dir("pipe");
  const fs::path manifest = three_box_scene(dir);
  for (PromptMode mode : {PromptMode::Crop, PromptMode::Blur}) {
    RunConfig cfg = config(manifest, dir / to_string(mode));
    cfg.prompt_mode = mode;
    run(cfg);
    const json report = read_json(cfg.out / kReportArtifact);
    for (const auto &inst : report["instances"]) EXPECT_FALSE(inst.contains("error"));
    EXPECT_EQ(read_json(cfg.out / kMetricsArtifact)["AP50"], 1.0) << to_string(mode);
  }
  RunConfig adj = config(manifest, dir / "adjusted");
  adj.adjust_topk = true;
  run(adj);
  const json prompts = read_json(adj.out / kPromptsArtifact);
  for (const auto &inst : prompts["instances"]) {
    int adjusted = 0;
    for (const auto &p : inst["prompts"]) {
      EXPECT_NE(p["origin"], "dataset");
      adjusted += p["origin"] == "adjusted";
    }
    EXPECT_EQ(adjusted, 2);
  }
}

TEST(Pipeline, MissingArtifactNamesFile) {
  TempDir dir("pipe");
  const RunConfig cfg = config(three_box_scene(dir), dir / "run");
  try {
    interpolate(cfg);
    ADD_FAILURE() << "expected MissingStageArtifact";
  } catch (const Error &e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingStageArtifact);
    EXPECT_NE(std::string(e.what()).find(kSelectArtifact), std::string::npos);
  }
  EXPECT_NVSP_ERROR(evaluate(cfg), ErrorCode::MissingStageArtifact);
}

TEST(Pipeline, InvisibleInstanceIsRecordedAndSkipped) {
  TempDir dir("pipe");
  const fs::path manifest = three_box_scene(dir);
  PointCloud cloud = load_ply(manifest.parent_path() / "cloud.ply");
  cloud.positions.push_back(Vec3(0, 0, 40)); // far above every camera
  cloud.colors.push_back(Vec3(1, 1, 1));
  write_ply(manifest.parent_path() / "cloud.ply", cloud, true);
  json masks = read_json(manifest.parent_path() / "masks.json");
  masks.push_back(json{{"instance_id", 7}, {"indices", {cloud.size() - 1}}});
  write_json(manifest.parent_path() / "masks.json", masks);

  const RunConfig cfg = config(manifest, dir / "run");
  const auto results = run(cfg);
  EXPECT_EQ(results.front().failed_instances, 1u);
  const json report = read_json(cfg.out / kReportArtifact);
  ASSERT_EQ(report["instances"].size(), 4u);
  EXPECT_NE(report["instances"][3]["error"].get<std::string>().find("NoVisiblePose"), std::string::npos);
  EXPECT_EQ(read_json(cfg.out / kMetricsArtifact)["AP"], 1.0);
  EXPECT_EQ(cli("run --manifest " + manifest.string() + " --out " + (dir / "cli").string()), 3);
}

TEST(Cli, ExitCodesAndStagedRun) {
  TempDir dir("cli");
  const fs::path manifest = three_box_scene(dir);
  const std::string common = " --manifest " + manifest.string() + " --out ";
  EXPECT_EQ(cli("run" + common + (dir / "a").string() + " --workers 2"), 0);
  for (const char *stage : {"select-views", "interpolate", "render", "prompts", "fuse", "eval"})
    EXPECT_EQ(cli(std::string(stage) + common + (dir / "b").string()), 0) << stage;
  EXPECT_EQ(tree(dir / "a"), tree(dir / "b"));
  EXPECT_TRUE(fs::exists(dir / "b" / "timings.json"));
  EXPECT_EQ(cli("run" + common + (dir / "c").string() + " --delta 0"), 2);
  EXPECT_EQ(cli("run" + common + (dir / "c").string() + " --prompt-mode circle"), 2);
  EXPECT_EQ(cli("run" + common + (dir / "c").string() + " --workers 0"), 2);
  EXPECT_EQ(cli("run --out " + (dir / "c").string()), 2);
  EXPECT_EQ(cli("run --manifest " + (dir / "missing.json").string() + " --out " + (dir / "c").string()), 4);
  EXPECT_EQ(cli("fuse" + common + (dir / "empty").string()), 4);
  EXPECT_EQ(cli("synth --out " + (dir / "synth").string() + " --boxes 2 --points 100 --poses 4"), 0);
  EXPECT_NO_THROW(load_scene(dir / "synth" / "manifest.json"));
}

TEST(Cli, SubprocessProviderRun) {
  TempDir dir("cli");
  const fs::path manifest = three_box_scene(dir);
  RunConfig mock = config(manifest, dir / "mock"), sub = config(manifest, dir / "sub");
  sub.provider = std::string("subprocess:") + NVSP_FAKE_PROVIDER;
  run(mock);
  run(sub);
  const json a = read_json(mock.out / kReportArtifact), b = read_json(sub.out / kReportArtifact);
  for (std::size_t i = 0; i < a["instances"].size(); ++i) {
    EXPECT_EQ(a["instances"][i]["label"], b["instances"][i]["label"]);
    EXPECT_NEAR(a["instances"][i]["similarity"].get<double>(), b["instances"][i]["similarity"].get<double>(), 1e-12);
  }
}
