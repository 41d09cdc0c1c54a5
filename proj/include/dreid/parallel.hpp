#pragma once

#include <functional>

namespace dreid {

// Worker count: DISENT_REID_THREADS env var, 0 or unset = hardware
// concurrency, 1 = run everything inline.
int thread_count();

// Test/CLI override; n = 0 restores the env-derived default.
void set_thread_count(int n);

// Static partition of [0, count) across workers. Callers only ever write to
// disjoint output ranges indexed by i, so results are bitwise identical for
// any worker count.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace dreid
