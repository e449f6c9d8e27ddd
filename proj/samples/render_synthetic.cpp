// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

// Splats a synthetic box scene from its first ring camera and writes the
// render next to the ray-cast reference photo.

#include <nvsprompt3d/image_io.hpp>
#include <nvsprompt3d/splat.hpp>
#include <nvsprompt3d/synthetic.hpp>

#include <iostream>

int main(int argc, char **argv) {
  const std::filesystem::path out = argc > 1 ? argv[1] : ".";
  std::filesystem::create_directories(out);
  const auto scene = nvsp::make_synthetic_scene(7, 3, 4000, 8);
  const auto gaussians = nvsp::init_from_pointcloud(scene.cloud);
  nvsp::RenderOptions opt;
  opt.workers = 4;
  const auto r = nvsp::render(gaussians, scene.poses[0], scene.intrinsics, nullptr, opt);
  nvsp::write_png(out / "splat.png", r.color);
  nvsp::write_png(out / "reference.png", scene.images[0]);
  std::cout << "wrote " << (out / "splat.png").string() << " and " << (out / "reference.png").string() << '\n';
}
