#pragma once

#include <cstddef>
#include <functional>

namespace collabod {

// Worker count: COLLABOD_THREADS when set to a positive integer, otherwise
// the hardware concurrency.
std::size_t thread_budget();

// Calls fn(i) for every i in [0, count), striding indices over at most
// thread_budget() threads. fn must be safe to call concurrently for
// distinct indices. The first exception thrown is rethrown.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace collabod
