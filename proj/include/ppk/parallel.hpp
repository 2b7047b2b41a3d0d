#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ppk {

/// Default worker count: available cores minus one, at least one.
inline std::size_t default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 1 ? hw - 1 : 1;
}

/// Runs body(i) for i in [0, count) on up to `workers` threads. Tasks are
/// handed out dynamically; callers write results into slot i so the outcome
/// does not depend on scheduling. Returns one exception slot per task.
template <typename Body>
std::vector<std::exception_ptr> parallel_for(std::size_t count,
                                             std::size_t workers, Body &&body) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto drain = [&]() {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (threads == 1) {
    drain();
    return errors;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (std::size_t w = 1; w < threads; ++w) pool.emplace_back(drain);
  drain();
  for (auto &th : pool) th.join();
  return errors;
}

}  // namespace ppk
