#pragma once

#include <cstddef>
#include <functional>

namespace cesor {

// Worker count used when a caller passes 0: hardware concurrency.
unsigned default_workers();

// Runs body(i) for i in [0, n) over up to `workers` threads. Each index is
// independent; the first exception thrown is rethrown after all threads join.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& body);

}  // namespace cesor
