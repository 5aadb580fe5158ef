#pragma once

#include <cstddef>
#include <functional>

namespace necode {

/// Worker count: NECODE_THREADS when set (≥ 1), otherwise the hardware
/// concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Work is split into contiguous chunks so every
/// index is handled exactly once; results must be written to per-index slots.
/// The first exception (lowest chunk) is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace necode
