// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: one subcommand per pipeline stage, `run` for the
// whole chain and `synth` to write a synthetic test scene.

#include <nvsprompt3d/pipeline.hpp>
#include <nvsprompt3d/synthetic.hpp>

#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

enum ExitCode { kOk = 0, kConfigError = 2, kPartialFailure = 3, kIoError = 4 };

int exit_code_for(nvsp::ErrorCode c) {
  switch (c) {
  case nvsp::ErrorCode::MissingFile:
  case nvsp::ErrorCode::IoFailure:
  case nvsp::ErrorCode::MissingStageArtifact:
  case nvsp::ErrorCode::ProviderFailure: return kIoError;
  default: return kConfigError;
  }
}

struct CliOptions {
  std::string manifest, out;
  double delta = 0, alpha = 0;
  int top_k = 0, n_interp = 0;
  std::string prompt_mode, fusion, provider = "mock";
  bool adjust_topk = false;
  int workers = 1;
  std::uint64_t seed = 0;
};

void add_run_options(CLI::App *cmd, CliOptions &o) {
  cmd->add_option("--manifest", o.manifest, "Scene manifest JSON")->required();
  cmd->add_option("--out", o.out, "Output directory")->required();
  cmd->add_option("--delta", o.delta, "Depth-consistency threshold");
  cmd->add_option("--top-k", o.top_k, "Number of selected views");
  cmd->add_option("--n-interp", o.n_interp, "Interpolated views per consecutive pair");
  cmd->add_option("--alpha", o.alpha, "Interpolated-feature weight in (0, 1]");
  cmd->add_option("--prompt-mode", o.prompt_mode, "crop|blur|seggauss");
  cmd->add_option("--fusion", o.fusion, "wfb|average");
  cmd->add_flag("--adjust-topk", o.adjust_topk, "Re-aim and re-render the selected views");
  cmd->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", o.seed, "Run seed (recorded in artifacts)");
  cmd->add_option("--provider", o.provider, "mock|subprocess:CMD");
}

nvsp::RunConfig to_config(const CLI::App *cmd, const CliOptions &o) {
  nvsp::RunConfig c;
  c.manifest = o.manifest;
  c.out = o.out;
  if (cmd->count("--delta")) c.delta = o.delta;
  if (cmd->count("--top-k")) c.top_k = o.top_k;
  if (cmd->count("--n-interp")) c.n_interp = o.n_interp;
  if (cmd->count("--alpha")) c.alpha = o.alpha;
  if (cmd->count("--prompt-mode")) c.prompt_mode = nvsp::parse_prompt_mode(o.prompt_mode);
  if (cmd->count("--fusion")) c.fusion_mode = nvsp::parse_fusion_mode(o.fusion);
  c.adjust_topk = o.adjust_topk;
  c.workers = o.workers;
  c.seed = o.seed;
  c.provider = o.provider;
  return c;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Open-vocabulary 3D instance labeling from novel-view prompts"};
  app.require_subcommand(1);

  using Stage = std::function<std::vector<nvsp::StageResult>(const nvsp::RunConfig &)>;
  const std::vector<std::pair<std::string, Stage>> stages{
      {"select-views", [](const nvsp::RunConfig &c) { return std::vector{nvsp::select_views(c)}; }},
      {"interpolate", [](const nvsp::RunConfig &c) { return std::vector{nvsp::interpolate(c)}; }},
      {"render", [](const nvsp::RunConfig &c) { return std::vector{nvsp::render_views(c)}; }},
      {"prompts", [](const nvsp::RunConfig &c) { return std::vector{nvsp::make_prompts(c)}; }},
      {"fuse", [](const nvsp::RunConfig &c) { return std::vector{nvsp::fuse(c)}; }},
      {"eval", [](const nvsp::RunConfig &c) { return std::vector{nvsp::evaluate(c)}; }},
      {"run", [](const nvsp::RunConfig &c) { return nvsp::run(c); }},
  };
  std::map<std::string, CliOptions> opts;
  std::map<std::string, CLI::App *> cmds;
  for (const auto &[name, fn] : stages) {
    auto *cmd = app.add_subcommand(name, name == "run" ? "Run every stage" : "Run the " + name + " stage");
    add_run_options(cmd, opts[name]);
    cmds[name] = cmd;
  }

  std::string synth_out;
  std::uint64_t synth_seed = 0;
  int boxes = 3, points = 400, poses = 12;
  auto *synth = app.add_subcommand("synth", "Write a synthetic colored-box scene");
  synth->add_option("--out", synth_out, "Scene directory")->required();
  synth->add_option("--seed", synth_seed, "Generator seed");
  synth->add_option("--boxes", boxes, "Number of boxes (1-6)");
  synth->add_option("--points", points, "Surface points per box");
  synth->add_option("--poses", poses, "Ring cameras");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  try {
    if (synth->parsed()) {
      const auto scene = nvsp::make_synthetic_scene(synth_seed, boxes, points, poses);
      std::cout << nvsp::write_synthetic_scene(synth_out, scene, nvsp::PipelineParams{}).string() << '\n';
      return kOk;
    }
    for (const auto &[name, fn] : stages) {
      if (!cmds[name]->parsed()) continue;
      const nvsp::RunConfig cfg = to_config(cmds[name], opts[name]);
      const auto results = fn(cfg);
      nvsp::write_timings(cfg.out, results);
      std::size_t failed = 0;
      for (const auto &r : results) {
        std::cerr << r.stage << ": " << r.seconds << " s";
        if (r.failed_instances) std::cerr << ", " << r.failed_instances << " instance(s) skipped";
        std::cerr << '\n';
        failed = std::max(failed, r.failed_instances);
      }
      return failed ? kPartialFailure : kOk;
    }
  } catch (const nvsp::Error &e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIoError;
  }
  return kConfigError;
}
