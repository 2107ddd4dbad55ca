#pragma once

#include <cstddef>
#include <functional>

namespace repflow {

/// Worker count used by parallel_for. Resolution order: set_thread_limit(),
/// then the REPFLOW_THREADS environment variable, then hardware concurrency.
std::size_t thread_count();
void set_thread_limit(std::size_t threads);

/// Runs body(i) for i in [0, count). Each index must write only its own
/// output slot; reductions happen afterwards in index order so results do not
/// depend on the thread count.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace repflow
