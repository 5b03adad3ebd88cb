#include "atlaspl/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace atlaspl {

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("ATLASPL_WORKERS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
      // ignore malformed override
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto threads = std::min<std::size_t>(static_cast<std::size_t>(resolve_workers(workers)), n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  std::mutex err_mu;
  std::size_t err_index = n;
  std::exception_ptr err;

  auto run = [&] {
    for (;;) {
      if (stop.load(std::memory_order_relaxed)) return;
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
        stop = true;
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads - 1);
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(run);
    run();
  }
  if (err) std::rethrow_exception(err);
}

void parallel_chunks(std::size_t n, int workers,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  parallel_for(chunk_count(n), workers, [&](std::size_t c) {
    const std::size_t begin = c * kReductionChunk;
    fn(c, begin, std::min(n, begin + kReductionChunk));
  });
}

}  // namespace atlaspl
