// Copyright 2026 The IFA Toolkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

namespace ifa::parallel {

inline unsigned default_workers() {
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// thrown by any task is rethrown on the calling thread after all workers join.
template <typename Fn>
void for_each_index(std::size_t n, unsigned workers, Fn&& fn) {
  if (n == 0) return;
  const unsigned threads =
      static_cast<unsigned>(std::min<std::size_t>(std::max(1u, workers), n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto body = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) pool.emplace_back(body);
  pool.clear();
  if (failure) std::rethrow_exception(failure);
}

// Maps items in chunks on the worker pool, then hands every result to
// `reduce` strictly in input order. Reductions are therefore bit-identical
// for any worker count.
template <typename Item, typename Map, typename Reduce>
void ordered_map_reduce(const std::vector<Item>& items, unsigned workers,
                        Map&& map, Reduce&& reduce,
                        std::size_t chunk_size = 256) {
  using Result = decltype(map(items.front()));
  for (std::size_t begin = 0; begin < items.size(); begin += chunk_size) {
    const std::size_t end = std::min(items.size(), begin + chunk_size);
    std::vector<std::optional<Result>> results(end - begin);
    for_each_index(end - begin, workers, [&](std::size_t i) {
      results[i].emplace(map(items[begin + i]));
    });
    for (auto& r : results) reduce(std::move(*r));
  }
}

}  // namespace ifa::parallel
