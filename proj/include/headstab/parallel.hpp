#ifndef HEADSTAB_PARALLEL_HPP
#define HEADSTAB_PARALLEL_HPP

#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace headstab {

inline int resolve_workers(int workers) {
  if (workers > 0) return workers;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

/// Runs fn(i) for i in [0, n) across `workers` threads in fixed chunks.
/// Results written into index-addressed slots stay deterministic regardless
/// of the worker count. The first exception thrown by any worker is rethrown.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const int w = std::min<std::size_t>(resolve_workers(workers), n == 0 ? 1 : n);
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(w);
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([&, t]() {
      try {
        for (std::size_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace headstab

#endif  // HEADSTAB_PARALLEL_HPP
