#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mvlab {

// Particles are processed in fixed-size chunks. The chunk layout never
// depends on the thread count, so chunk-ordered reductions are bit-identical
// whether one or many threads run them.
inline constexpr std::size_t kChunkSize = 2048;

void set_thread_count(unsigned n);
unsigned thread_count();

inline std::size_t chunk_count(std::size_t n) { return (n + kChunkSize - 1) / kChunkSize; }

// Calls body(chunk, begin, end) for every chunk of [0, n).
template <class Body>
void parallel_chunks(std::size_t n, Body&& body) {
  const std::size_t chunks = chunk_count(n);
  const unsigned workers = std::min<std::size_t>(thread_count(), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) body(c, c * kChunkSize, std::min(n, (c + 1) * kChunkSize));
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t c = w; c < chunks; c += workers)
          body(c, c * kChunkSize, std::min(n, (c + 1) * kChunkSize));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  parallel_chunks(n, [&](std::size_t, std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) body(i);
  });
}

}  // namespace mvlab
