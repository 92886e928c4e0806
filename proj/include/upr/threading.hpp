#pragma once

#include <cstdint>
#include <functional>

namespace upr {

// Global worker count for operator-internal parallelism. 1 = fully serial
// (the deterministic reference mode). Values > 1 parallelize across
// disjoint output slices; accumulation-type operators use per-thread
// buffers merged in a fixed order, so results are deterministic for a
// fixed thread count.
void set_num_threads(int n);
int num_threads();

// Invokes fn(begin, end) on contiguous chunks of [0, n). Chunk boundaries
// depend only on n and the configured thread count. Nested calls from
// inside a worker run serially.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

} // namespace upr
