#pragma once

#include <cstddef>
#include <functional>

namespace onedse {

/// Worker count: ONEDSE_THREADS if set and positive, else hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Work items must
/// write to disjoint outputs; the first exception thrown is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace onedse
