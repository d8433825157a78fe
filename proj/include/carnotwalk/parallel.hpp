#pragma once

// Deterministic trial parallelism. Each trial derives its own counter-based
// RNG stream, so the value a trial contributes is independent of which
// worker runs it; bool outcomes merge as integer counts and everything else
// is written into per-trial slots. Results are identical for any thread
// count, including 1.

#include <cstdint>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace carnot {

/// Worker count: explicit request > 0 wins, then CARNOT_THREADS, then 1.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("CARNOT_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<int>(v);
  }
  return 1;
}

/// Runs fn(i) for i in [0, count) on contiguous index blocks.
template <typename Fn>
void parallel_for(std::uint64_t count, int threads, Fn&& fn) {
  threads = resolve_threads(threads);
  if (threads <= 1 || count < 2) {
    for (std::uint64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const std::uint64_t workers = std::min<std::uint64_t>(threads, count);
  std::vector<std::thread> pool;
  for (std::uint64_t w = 0; w < workers; ++w) {
    const std::uint64_t lo = count * w / workers;
    const std::uint64_t hi = count * (w + 1) / workers;
    pool.emplace_back([lo, hi, &fn] {
      for (std::uint64_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

/// Counts trials where pred(i) holds; exact integer merge, so the count is
/// independent of the partitioning.
template <typename Pred>
std::uint64_t parallel_count(std::uint64_t trials, int threads, Pred&& pred) {
  threads = resolve_threads(threads);
  if (threads <= 1 || trials < 2) {
    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < trials; ++i)
      if (pred(i)) ++hits;
    return hits;
  }
  const std::uint64_t workers = std::min<std::uint64_t>(threads, trials);
  std::vector<std::uint64_t> partial(workers, 0);
  std::vector<std::thread> pool;
  for (std::uint64_t w = 0; w < workers; ++w) {
    const std::uint64_t lo = trials * w / workers;
    const std::uint64_t hi = trials * (w + 1) / workers;
    pool.emplace_back([lo, hi, w, &partial, &pred] {
      std::uint64_t hits = 0;
      for (std::uint64_t i = lo; i < hi; ++i)
        if (pred(i)) ++hits;
      partial[w] = hits;
    });
  }
  for (auto& t : pool) t.join();
  std::uint64_t total = 0;
  for (std::uint64_t h : partial) total += h;
  return total;
}

}  // namespace carnot
