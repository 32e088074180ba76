#include "wavesplit/threading.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace wavesplit {

int worker_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("WAVESPLIT_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      return v <= 1 ? 1 : static_cast<int>(std::min(v, 64L));
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(hw, 16u));
  }();
  return cached;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
  if (n <= 0) return;
  const int workers = worker_threads();
  // Spawning is not worth it for short loops.
  if (workers <= 1 || n < 1024) {
    body(0, n);
    return;
  }
  const int k = static_cast<int>(std::min<std::int64_t>(workers, n));
  const std::int64_t chunk = (n + k - 1) / k;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(k) - 1);
  for (int w = 1; w < k; ++w) {
    const std::int64_t lo = w * chunk;
    const std::int64_t hi = std::min<std::int64_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  body(0, std::min<std::int64_t>(chunk, n));
  for (auto& t : pool) t.join();
}

}  // namespace wavesplit
