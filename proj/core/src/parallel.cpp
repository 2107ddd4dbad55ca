#include "repflow/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace repflow {
namespace {

std::atomic<std::size_t> g_thread_limit{0};

std::size_t env_threads() {
  const char* value = std::getenv("REPFLOW_THREADS");
  if (value == nullptr) return 0;
  try {
    const long parsed = std::stol(value);
    return parsed > 0 ? static_cast<std::size_t>(parsed) : 0;
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace

std::size_t thread_count() {
  if (const std::size_t limit = g_thread_limit.load(); limit > 0) return limit;
  if (const std::size_t env = env_threads(); env > 0) return env;
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

void set_thread_limit(std::size_t threads) { g_thread_limit.store(threads); }

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min(thread_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next.store(count);
        }
      }
    });
  }
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace repflow
