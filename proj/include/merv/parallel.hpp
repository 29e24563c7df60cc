#pragma once

#include <cstddef>
#include <functional>

namespace merv {

/// Worker cap from MERV_THREADS (unset or invalid: 1).
std::size_t thread_cap();

/// Runs fn(i) for i in [0, n) on up to thread_cap() threads. Callers write
/// results into slot i, so output order never depends on scheduling. The
/// first exception thrown by any task is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace merv
