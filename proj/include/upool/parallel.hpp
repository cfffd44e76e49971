#ifndef UPOOL_PARALLEL_HPP
#define UPOOL_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace upool {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(task) for task in [0, tasks) on up to `threads` workers. Tasks are
// claimed dynamically; callers write results into per-task slots and reduce
// them in task order afterwards, so output does not depend on scheduling.
template <class Fn>
void parallel_tasks(std::size_t tasks, int threads, Fn &&fn) {
  const std::size_t workers =
      std::min<std::size_t>(tasks, static_cast<std::size_t>(resolve_threads(threads)));
  if (workers <= 1) {
    for (std::size_t t = 0; t < tasks; ++t) fn(t);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t t = next.fetch_add(1);
      if (t >= tasks) return;
      try {
        fn(t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(tasks);
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto &th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace upool

#endif
