#include "nodegam/threadpool.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace nodegam {
namespace {

std::size_t g_threads = std::thread::hardware_concurrency();

}  // namespace

void set_num_threads(std::size_t n) { g_threads = n == 0 ? 1 : n; }

std::size_t num_threads() { return g_threads == 0 ? 1 : g_threads; }

std::size_t parallel_chunks(std::size_t n) {
  const std::size_t t = num_threads();
  if (t <= 1 || n <= 1) return 1;
  return t < n ? t : n;
}

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t chunks = parallel_chunks(n);
  if (chunks == 1) {
    fn(0, n, 0);
    return;
  }
  const std::size_t base = n / chunks;
  const std::size_t rem = n % chunks;
  std::vector<std::thread> workers;
  workers.reserve(chunks);
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  std::size_t begin = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t len = base + (c < rem ? 1 : 0);
    const std::size_t end = begin + len;
    workers.emplace_back([&, begin, end, c] {
      try {
        fn(begin, end, c);
      } catch (...) {
        if (!failed.exchange(true)) error = std::current_exception();
      }
    });
    begin = end;
  }
  for (auto& w : workers) w.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace nodegam
