#pragma once

#include <cstddef>
#include <functional>

namespace tubule {

/// Upper bound on worker threads used by internal loops. Work is always
/// partitioned so that each output element is written by exactly one task in a
/// fixed order, hence results do not depend on this setting.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs fn(i) for i in [0, n). Falls back to a serial loop for small work.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t min_parallel = 2);

}  // namespace tubule
