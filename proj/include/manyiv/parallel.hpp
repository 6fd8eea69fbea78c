#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace manyiv {

inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Maps fn(block, lo, hi) over [0, n) split into fixed-size blocks and
/// returns the per-block results indexed by block number. Because each block
/// is produced sequentially by exactly one worker and the caller folds the
/// returned vector in block order, the final result is identical for every
/// thread count.
template <typename Acc, typename BlockFn>
std::vector<Acc> blocked_map(std::int64_t n, std::int64_t block_size, int threads,
                             BlockFn fn) {
  const std::int64_t nblocks = block_size > 0 ? (n + block_size - 1) / block_size : 0;
  std::vector<Acc> out(static_cast<std::size_t>(std::max<std::int64_t>(nblocks, 0)));
  if (nblocks <= 0) return out;

  std::atomic<std::int64_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&]() {
    try {
      for (;;) {
        const std::int64_t b = next.fetch_add(1, std::memory_order_relaxed);
        if (b >= nblocks) break;
        const std::int64_t lo = b * block_size;
        const std::int64_t hi = std::min(n, lo + block_size);
        out[static_cast<std::size_t>(b)] = fn(b, lo, hi);
      }
    } catch (...) {
      const std::lock_guard<std::mutex> lock(error_mutex);
      if (!first_error) first_error = std::current_exception();
      next.store(nblocks, std::memory_order_relaxed);
    }
  };

  const int nthreads =
      static_cast<int>(std::min<std::int64_t>(resolve_threads(threads), nblocks));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(nthreads - 1));
    for (int i = 0; i < nthreads - 1; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

}  // namespace manyiv
