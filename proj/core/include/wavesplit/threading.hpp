#pragma once

#include <cstdint>
#include <functional>

namespace wavesplit {

// Worker cap: WAVESPLIT_THREADS env var, where 0 means single-threaded
// deterministic mode. Unset falls back to hardware concurrency.
int worker_threads();

// Static-chunk parallel loop over [0, n). Results are deterministic for a
// fixed worker count; with one worker it runs inline on the caller.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace wavesplit
