#include "dreid/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace dreid {

namespace {

int env_threads() {
  const char* v = std::getenv("DISENT_REID_THREADS");
  int n = v ? std::atoi(v) : 0;
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return n > 0 ? n : 1;
}

std::atomic<int> g_override{0};

}  // namespace

int thread_count() {
  int o = g_override.load(std::memory_order_relaxed);
  if (o > 0) return o;
  static int env = env_threads();
  return env;
}

void set_thread_count(int n) { g_override.store(n, std::memory_order_relaxed); }

void parallel_for(int count, const std::function<void(int)>& fn) {
  int workers = thread_count();
  if (workers <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  if (workers > count) workers = count;
  int chunk = (count + workers - 1) / workers;
  std::vector<std::thread> threads;
  threads.reserve(workers - 1);
  auto run = [&](int t) {
    int lo = t * chunk;
    int hi = lo + chunk < count ? lo + chunk : count;
    for (int i = lo; i < hi; ++i) fn(i);
  };
  for (int t = 1; t < workers; ++t) threads.emplace_back(run, t);
  run(0);
  for (auto& th : threads) th.join();
}

}  // namespace dreid
