#include "binprompt/parallel.h"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace binprompt {

void parallel_chunks(std::size_t n, int workers, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t k = std::clamp<std::size_t>(workers, 1, n);
  if (k == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::exception_ptr> errors(k);
  std::vector<std::thread> threads;
  threads.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t begin = n * c / k;
    const std::size_t end = n * (c + 1) / k;
    threads.emplace_back([&, c, begin, end] {
      try {
        fn(begin, end);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace binprompt
