#pragma once

#include <cstddef>
#include <functional>

namespace nclab {

// Worker count for metric evaluation, from NCLAB_THREADS (default 1).
std::size_t metric_threads();

// Runs fn(0..n-1) on up to `threads` workers. If any call throws, the
// exception from the lowest index is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace nclab
