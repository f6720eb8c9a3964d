#pragma once

#include <cstdint>
#include <functional>

namespace cnnf {

// Worker count for kernel parallelism: CNNF_THREADS when set (>= 1),
// otherwise the hardware thread count. Read once per process.
int thread_budget();

// Runs fn(begin, end) over contiguous chunks of [0, n), one chunk per worker.
// Callers must only parallelize work whose result is independent of the
// chunking (disjoint outputs, per-element accumulation order unchanged), so
// results are identical for any thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

// Same, with an explicit worker count (used by tests to prove invariance).
void parallel_for(std::int64_t n, int workers,
                  const std::function<void(std::int64_t, std::int64_t)>& fn);

}  // namespace cnnf
