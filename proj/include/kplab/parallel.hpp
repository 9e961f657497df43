#pragma once

#include <cstddef>
#include <functional>

namespace kplab {

// Worker count: KPLAB_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

// Runs fn(i) for i in [0, n) on up to thread_count() threads. Nested calls
// run serially. Results must not depend on scheduling; callers write into
// per-index slots and reduce in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace kplab
