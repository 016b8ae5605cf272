#pragma once

#include <functional>

namespace liparch {

// LIPARCH_THREADS, default 1 (sequential). Read once per process.
int thread_budget();

// Runs fn(i) for i in [0, n). fn must write only to slots owned by index i;
// reductions happen after the loop, in index order, so results never depend
// on the schedule.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace liparch
