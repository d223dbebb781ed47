#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace stereopose {

// Runs fn(i) for i in [begin, end) on up to `threads` workers. Work is split
// into contiguous chunks so results remain reproducible whenever fn(i) is a
// pure function of i.
inline void parallel_for(int begin, int end, int threads,
                         const std::function<void(int)>& fn) {
  int count = end - begin;
  if (count <= 0) return;
  if (threads < 1) threads = 1;
  if (threads > count) threads = count;
  if (threads == 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::mutex error_mu;
  int chunk = (count + threads - 1) / threads;
  for (int w = 0; w < threads; ++w) {
    int lo = begin + w * chunk;
    int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace stereopose
