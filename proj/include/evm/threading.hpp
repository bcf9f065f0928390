#pragma once

#include <cstdint>
#include <functional>

namespace evm {

// Process-wide cap on worker threads. Defaults to hardware concurrency;
// the CLI sets it from --threads. A cap of 1 forces serial execution.
int max_threads();
void set_max_threads(int n);

// Runs body(begin, end) over disjoint sub-ranges of [0, n). Ranges never
// overlap, so bodies that only write to per-index slots produce identical
// results for any thread count. min_chunk bounds how finely the range is
// split; ranges shorter than min_chunk run inline on the calling thread.
void parallel_for(std::int64_t n, std::int64_t min_chunk,
                  const std::function<void(std::int64_t, std::int64_t)>& body);

}  // namespace evm
