#pragma once

#include <cstddef>
#include <functional>

namespace posefuse {

/// Worker count: hardware concurrency capped by POSEFUSE_THREADS when set (>= 1).
int worker_count();

/// Calls fn(i) for i in [0, n) across worker_count() threads. Each index runs exactly
/// once; callers write results into per-index slots so the output is independent of
/// scheduling. The first exception thrown by any fn is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace posefuse
