#pragma once

#include <cstddef>
#include <functional>

namespace capsed::kernels {

// Number of worker threads for intra-kernel tiling; from CAPSED_THREADS,
// default min(hardware_concurrency, 8). 0 or 1 disables threading.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Runs fn(begin, end) over a static partition of [0, n) across the pool.
// Each index is handled by exactly one invocation, so any per-element
// accumulation order is unchanged and results are schedule-independent.
// Falls back to a single inline call when n < min_per_thread * 2 or the
// pool is disabled.
void parallel_for(std::size_t n, std::size_t min_per_thread,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace capsed::kernels
