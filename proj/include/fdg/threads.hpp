#ifndef FDG_THREADS_HPP
#define FDG_THREADS_HPP

#include <cstddef>
#include <functional>

namespace fdg {

// Worker-thread cap from FDG_THREADS; defaults to 1 so every run is
// single-threaded unless asked otherwise. Values below 1 clamp to 1.
int worker_threads();

// Runs fn(i) for i in [0, n). Each index writes only its own output slot, so
// results are identical at any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace fdg

#endif
