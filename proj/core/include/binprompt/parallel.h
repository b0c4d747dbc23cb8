#pragma once

#include <cstddef>
#include <functional>

namespace binprompt {

// Splits [0, n) into contiguous chunks and runs fn(begin, end) for each on
// up to `workers` threads. Chunk boundaries depend only on n and workers, and
// callers write results into pre-sized slots, so output never depends on
// scheduling. The first exception (by chunk) is rethrown.
void parallel_chunks(std::size_t n, int workers, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace binprompt
