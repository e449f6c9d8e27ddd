// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <nvsprompt3d/error.hpp>
#include <nvsprompt3d/fusion.hpp>
#include <nvsprompt3d/image_io.hpp>

#include <json.hpp>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>

namespace nvsp {

/// Embedding provider backed by an external process speaking line-delimited
/// JSON over stdio. The process first prints {"dimension": D}; then for each
/// request line {"id": n, "image_path": p} it answers {"id": n, "vector": [...]}.
/// Requests are serialized.
class SubprocessProvider final : public EmbeddingProvider {
public:
  explicit SubprocessProvider(const std::string &command) : command_(command) {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0)
      fail(ErrorCode::ProviderFailure, "pipe() failed for '" + command + "'");
    pid_ = fork();
    if (pid_ < 0) fail(ErrorCode::ProviderFailure, "fork() failed for '" + command + "'");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char *>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
    fcntl(write_fd_, F_SETFD, FD_CLOEXEC);
    fcntl(read_fd_, F_SETFD, FD_CLOEXEC);

    try {
      const auto hello = parse_line(read_line());
      if (!hello.contains("dimension") || !hello["dimension"].is_number_integer() || hello["dimension"].get<int>() < 1)
        fail(ErrorCode::ProviderFailure, "'" + command_ + "' did not announce a dimension");
      dimension_ = hello["dimension"].get<int>();
    } catch (...) {
      shutdown();
      throw;
    }
  }

  SubprocessProvider(const SubprocessProvider &) = delete;
  SubprocessProvider &operator=(const SubprocessProvider &) = delete;

  ~SubprocessProvider() override { shutdown(); }

  int dimension() const override { return dimension_; }

  FeatureVector embed_file(const std::filesystem::path &png) override {
    std::lock_guard lock(mutex_);
    const long long id = next_id_++;
    const std::string request =
        nlohmann::json{{"id", id}, {"image_path", std::filesystem::absolute(png).string()}}.dump() + "\n";
    write_all(request);
    const auto response = parse_line(read_line());
    if (!response.contains("id") || response["id"] != id)
      fail(ErrorCode::ProviderFailure, "'" + command_ + "' answered out of order for request " + std::to_string(id));
    const auto &vec = response.value("vector", nlohmann::json());
    if (!vec.is_array() || static_cast<int>(vec.size()) != dimension_)
      fail(ErrorCode::ProviderFailure, "'" + command_ + "' returned a vector of the wrong dimension");
    FeatureVector v(dimension_);
    for (int i = 0; i < dimension_; ++i) {
      if (!vec[i].is_number()) fail(ErrorCode::ProviderFailure, "'" + command_ + "' returned a non-numeric entry");
      v[i] = vec[i].get<double>();
    }
    if (!v.allFinite()) fail(ErrorCode::ProviderFailure, "'" + command_ + "' returned a non-finite vector");
    return v;
  }

  FeatureVector embed(const Image &image) override {
    static std::atomic<unsigned> counter{0};
    const auto path = std::filesystem::temp_directory_path() /
                      ("nvsp_embed_" + std::to_string(getpid()) + "_" + std::to_string(counter++) + ".png");
    write_png(path, image);
    struct Remove {
      std::filesystem::path p;
      ~Remove() {
        std::error_code ec;
        std::filesystem::remove(p, ec);
      }
    } cleanup{path};
    return embed_file(path);
  }

private:
  // Closing stdin is the child's cue to exit.
  void shutdown() {
    if (write_fd_ >= 0) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    write_fd_ = read_fd_ = -1;
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  static nlohmann::json parse_line(const std::string &line) {
    try {
      return nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception &) {
      fail(ErrorCode::ProviderFailure, "malformed provider line: " + line.substr(0, 120));
    }
  }

  void write_all(const std::string &s) {
    // A dead child must surface as an error, not a SIGPIPE.
    struct sigaction ignore {}, old {};
    ignore.sa_handler = SIG_IGN;
    sigaction(SIGPIPE, &ignore, &old);
    std::size_t off = 0;
    while (off < s.size()) {
      const ssize_t n = ::write(write_fd_, s.data() + off, s.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) {
        sigaction(SIGPIPE, &old, nullptr);
        fail(ErrorCode::ProviderFailure, "write to '" + command_ + "' failed");
      }
      off += static_cast<std::size_t>(n);
    }
    sigaction(SIGPIPE, &old, nullptr);
  }

  std::string read_line() {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) fail(ErrorCode::ProviderFailure, "'" + command_ + "' closed its output");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  std::string command_;
  pid_t pid_ = -1;
  int write_fd_ = -1, read_fd_ = -1;
  int dimension_ = 0;
  long long next_id_ = 0;
  std::string buffer_;
  std::mutex mutex_;
};

/// "mock" or "subprocess:<shell command>".
inline std::unique_ptr<EmbeddingProvider> make_provider(const std::string &name) {
  if (name.empty() || name == "mock") return std::make_unique<MockProvider>();
  const std::string prefix = "subprocess:";
  if (name.rfind(prefix, 0) == 0 && name.size() > prefix.size())
    return std::make_unique<SubprocessProvider>(name.substr(prefix.size()));
  fail(ErrorCode::SchemaViolation, "provider: '" + name + "' is not mock or subprocess:CMD");
}

} // namespace nvsp
