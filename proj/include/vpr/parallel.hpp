#pragma once

#include <cstddef>
#include <functional>

namespace vpr {

/// Worker count: VPR_THREADS if set and positive, else hardware concurrency.
std::size_t worker_count();

/// Runs body(i) for i in [0, n). Iterations must write to disjoint outputs;
/// results are therefore independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace vpr
