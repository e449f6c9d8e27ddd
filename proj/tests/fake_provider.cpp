// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

// Test double for the subprocess embedding protocol: answers with the
// histogram embedding of each requested PNG.
//   fake_provider            well-behaved
//   fake_provider mute       exits without announcing a dimension
//   fake_provider short      announces D=64 but answers with 3 numbers
//   fake_provider die N      exits after N answers

#include <nvsprompt3d/fusion.hpp>
#include <nvsprompt3d/image_io.hpp>

#include <json.hpp>

#include <iostream>
#include <string>

int main(int argc, char **argv) {
  const std::string mode = argc > 1 ? argv[1] : "";
  const long limit = mode == "die" && argc > 2 ? std::stol(argv[2]) : -1;
  if (mode == "mute") return 0;
  std::cout << nlohmann::json{{"dimension", 64}}.dump() << std::endl;
  std::string line;
  long answered = 0;
  while (std::getline(std::cin, line)) {
    if (limit >= 0 && answered >= limit) return 1;
    const auto req = nlohmann::json::parse(line);
    nlohmann::json resp{{"id", req["id"]}};
    if (mode == "short") {
      resp["vector"] = {1.0, 0.0, 0.0};
    } else {
      const auto v = nvsp::mock_embed(nvsp::read_png(req["image_path"].get<std::string>()));
      resp["vector"] = std::vector<double>(v.data(), v.data() + v.size());
    }
    std::cout << resp.dump() << std::endl;
    ++answered;
  }
  return 0;
}
