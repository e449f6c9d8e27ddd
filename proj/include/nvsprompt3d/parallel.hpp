// Copyright Contributors to the nvsprompt3d project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nvsp {

/// Runs fn(i) for every i in [0, count) on up to `workers` threads. Items are
/// claimed dynamically, so fn must only write to item-owned state. The first
/// exception thrown by any item is rethrown after all threads join.
template <typename Fn> void parallel_for(std::size_t count, int workers, Fn &&fn) {
  const std::size_t nthreads = std::min<std::size_t>(std::max(1, workers), count);
  if (nthreads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(nthreads - 1);
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(body);
  body();
  for (auto &th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Splits [0, count) into contiguous chunks and runs fn(begin, end) per chunk.
template <typename Fn> void parallel_chunks(std::size_t count, int workers, std::size_t min_chunk, Fn &&fn) {
  if (count == 0) return;
  const std::size_t chunk = std::max<std::size_t>(min_chunk, (count + 4 * std::max(1, workers) - 1) /
                                                                 (4 * std::max(1, workers)));
  const std::size_t nchunks = (count + chunk - 1) / chunk;
  parallel_for(nchunks, workers, [&](std::size_t c) {
    const std::size_t begin = c * chunk;
    fn(begin, std::min(count, begin + chunk));
  });
}

} // namespace nvsp
