// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace atlasgs {

namespace {
std::atomic<std::size_t> g_threads{1};
}

void set_thread_count(std::size_t n) { g_threads.store(std::max<std::size_t>(1, n)); }
std::size_t thread_count() { return g_threads.load(); }

void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, std::size_t)> &body) {
    const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(1, n));
    if (workers <= 1) {
        body(0, 0, n);
        return;
    }
    const std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t b = std::min(n, w * chunk);
        const std::size_t e = std::min(n, b + chunk);
        pool.emplace_back([&body, w, b, e] { body(w, b, e); });
    }
    body(0, 0, std::min(n, chunk));
    for (auto &t : pool) {
        t.join();
    }
}

} // namespace atlasgs
