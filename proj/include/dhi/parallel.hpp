#pragma once

#include <cstddef>
#include <functional>

namespace dhi {

// Worker count: DHI_THREADS when set (>= 1), otherwise hardware concurrency.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Calls fn(i) for i in [0, n). Iterations are split into contiguous blocks;
// fn must only write state owned by index i so results do not depend on the
// worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace dhi
