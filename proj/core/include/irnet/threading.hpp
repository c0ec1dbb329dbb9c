#pragma once

#include <cstdint>
#include <functional>

namespace irnet {

// Worker count: hardware concurrency capped by the IRNET_THREADS env var.
int worker_threads();

// Runs fn over [0, n) split into contiguous chunks, one chunk per worker.
// Chunks are independent; each worker reduces serially within its chunk, so
// results do not depend on the thread count.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

} // namespace irnet
