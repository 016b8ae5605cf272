#include "liparch/parallel.hpp"

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace liparch {

int thread_budget() {
  static const int budget = [] {
    const char* env = std::getenv("LIPARCH_THREADS");
    if (!env || !*env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    if (v < 1) return 1;
    return static_cast<int>(std::min<long>(v, 256));
  }();
  return budget;
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(thread_budget(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace liparch
