#pragma once

#include <algorithm>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace hyperkick {

// Worker-thread count: explicit setting wins, then HYPERKICK_THREADS, then
// hardware concurrency. All parallel loops write to disjoint preallocated
// slots, so results are bit-identical for any thread count.

inline int& thread_override() {
  static int n = 0;  // 0 = not set
  return n;
}

inline void set_thread_count(int n) { thread_override() = std::max(0, n); }

inline int thread_count() {
  if (thread_override() > 0) return thread_override();
  if (const char* env = std::getenv("HYPERKICK_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

// Static-partition parallel map over [0, n). Exceptions from workers are
// rethrown on the calling thread (first one wins).
template <typename Fn>
void parallel_for(long n, Fn&& fn) {
  if (n <= 0) return;
  int nt = std::min<long>(thread_count(), n);
  if (nt <= 1) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errs(nt);
  long chunk = (n + nt - 1) / nt;
  for (int t = 0; t < nt; ++t) {
    long lo = t * chunk, hi = std::min(n, lo + chunk);
    pool.emplace_back([&, t, lo, hi] {
      try {
        for (long i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errs[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace hyperkick
