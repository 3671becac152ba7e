#pragma once

#include <cstddef>
#include <functional>

namespace apa {

/// Worker count: min(hardware concurrency, APA_THREADS if set), at least 1.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous index ranges,
/// one per worker; fn must not touch shared mutable state except through
/// disjoint per-index slots. Falls back to a plain loop for small n.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace apa
