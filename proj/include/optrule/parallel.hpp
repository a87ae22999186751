#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace optrule {

// Worker cap from OPTRULE_THREADS (default: hardware concurrency).
inline std::size_t worker_limit() {
  if (const char* env = std::getenv("OPTRULE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

namespace detail {
inline thread_local bool in_parallel_region = false;
}

// Runs body(i) for i in [0, count). Each index writes only its own output
// slot, so results do not depend on scheduling. The first exception thrown
// by any task is rethrown after all workers join. Nested calls run serially.
inline void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t workers =
      detail::in_parallel_region ? 1 : std::min(worker_limit(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    detail::in_parallel_region = true;
    while (true) {
      std::size_t i;
      {
        std::lock_guard lock(mu);
        if (next >= count || failure) return;
        i = next++;
      }
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace optrule
