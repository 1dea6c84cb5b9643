// Copyright (c) 2026 the nvqad authors
// SPDX-License-Identifier: Apache-2.0
#include "nvqad/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nvqad {

struct ThreadPool::Impl {
  std::mutex mu;
  std::condition_variable cv_work;
  std::condition_variable cv_done;
  std::vector<std::thread> workers;
  const std::function<void(std::int64_t, std::int64_t)>* body = nullptr;
  std::vector<std::pair<std::int64_t, std::int64_t>> chunks;
  std::size_t next_chunk = 0;
  int active = 0;
  std::uint64_t generation = 0;
  bool stop = false;
  std::exception_ptr first_error;

  void run_chunk(std::int64_t lo, std::int64_t hi) {
    try {
      (*body)(lo, hi);
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu);
      if (!first_error) first_error = std::current_exception();
    }
  }

  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      std::unique_lock<std::mutex> lk(mu);
      cv_work.wait(lk, [&] { return stop || generation != seen; });
      if (stop) return;
      seen = generation;
      for (;;) {
        if (next_chunk >= chunks.size()) break;
        auto [lo, hi] = chunks[next_chunk++];
        lk.unlock();
        run_chunk(lo, hi);
        lk.lock();
      }
      if (--active == 0) cv_done.notify_all();
    }
  }
};

ThreadPool::ThreadPool() : impl_(new Impl) {
  int n = 0;
  if (const char* env = std::getenv("NVQAD_THREADS")) n = std::atoi(env);
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  n_threads_ = std::max(1, n);
  for (int i = 1; i < n_threads_; ++i) impl_->workers.emplace_back([this] { impl_->worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->stop = true;
  }
  impl_->cv_work.notify_all();
  for (auto& t : impl_->workers) t.join();
  delete impl_;
}

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

void ThreadPool::parallel_for(std::int64_t begin, std::int64_t end, std::int64_t min_grain,
                              const std::function<void(std::int64_t, std::int64_t)>& body) {
  std::int64_t span = end - begin;
  if (span <= 0) return;
  if (n_threads_ == 1 || span <= min_grain) {
    body(begin, end);
    return;
  }
  std::int64_t n_chunks = std::min<std::int64_t>(n_threads_, (span + min_grain - 1) / min_grain);
  std::int64_t per = (span + n_chunks - 1) / n_chunks;
  {
    std::lock_guard<std::mutex> lk(impl_->mu);
    impl_->chunks.clear();
    for (std::int64_t lo = begin; lo < end; lo += per)
      impl_->chunks.emplace_back(lo, std::min(end, lo + per));
    impl_->body = &body;
    impl_->next_chunk = 0;
    impl_->active = static_cast<int>(impl_->workers.size());
    impl_->first_error = nullptr;
    ++impl_->generation;
  }
  impl_->cv_work.notify_all();
  // The calling thread participates too.
  for (;;) {
    std::unique_lock<std::mutex> lk(impl_->mu);
    if (impl_->next_chunk >= impl_->chunks.size()) break;
    auto [lo, hi] = impl_->chunks[impl_->next_chunk++];
    lk.unlock();
    impl_->run_chunk(lo, hi);
  }
  std::unique_lock<std::mutex> lk(impl_->mu);
  impl_->cv_done.wait(lk, [&] { return impl_->active == 0; });
  if (impl_->first_error) {
    auto err = impl_->first_error;
    impl_->first_error = nullptr;
    lk.unlock();
    std::rethrow_exception(err);
  }
}

}  // namespace nvqad
