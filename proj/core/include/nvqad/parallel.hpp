// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

namespace nvqad {

// Process-wide worker pool. Thread count comes from NVQAD_THREADS (default:
// hardware concurrency), read once at first use. Work is split into static
// contiguous chunks, so any routine whose chunks write disjoint outputs is
// deterministic regardless of the thread count.
class ThreadPool {
 public:
  static ThreadPool& instance();

  int threads() const { return n_threads_; }

  // Calls body(lo, hi) over a static partition of [begin, end). Runs inline
  // when the range is below min_grain or the pool has one thread.
  void parallel_for(std::int64_t begin, std::int64_t end, std::int64_t min_grain,
                    const std::function<void(std::int64_t, std::int64_t)>& body);

  ~ThreadPool();
  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

 private:
  ThreadPool();
  struct Impl;
  Impl* impl_;
  int n_threads_;
};

}  // namespace nvqad
