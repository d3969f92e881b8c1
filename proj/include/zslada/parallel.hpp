#pragma once

#include "zslada/common.hpp"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace zslada {

/// Thread cap for row-parallel evaluation: ZSLADA_THREADS if set, else hardware concurrency.
int eval_threads();

/// Runs fn(begin, end) over disjoint contiguous row ranges. Each row's result
/// must depend only on that row, so output is identical for any thread count.
template <typename Fn>
void parallel_rows(Index n, Fn&& fn, Index min_rows_per_thread = 256) {
  const Index threads = std::min<Index>(eval_threads(), std::max<Index>(1, n / min_rows_per_thread));
  if (threads <= 1) {
    fn(Index{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(threads));
  const Index chunk = (n + threads - 1) / threads;
  for (Index t = 0; t < threads; ++t) {
    const Index begin = t * chunk;
    const Index end = std::min(n, begin + chunk);
    pool.emplace_back([&, t, begin, end] {
      try {
        if (begin < end) fn(begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace zslada
