#pragma once

#include <cstddef>
#include <functional>

namespace mhmr {

/// Worker count: MHMR_THREADS if set (>= 1), otherwise the hardware concurrency.
int thread_count();

/// Runs fn(i) for i in [0, n) on up to `threads` threads. Iterations must be
/// independent; the first exception thrown is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, int threads = thread_count());

}  // namespace mhmr
