#pragma once

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace mbic {

// Static-partition parallel loop. Each index is processed by exactly one
// worker with the same per-index arithmetic as the sequential loop, so results
// are bitwise-identical to running body(0..n) in order. Scans and coders that
// are order-sensitive must not use this.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    static const std::size_t hw = std::thread::hardware_concurrency() > 0
                                      ? std::thread::hardware_concurrency()
                                      : 1;
    if (n == 0) return;
    const std::size_t workers = hw < n ? hw : n;
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    const std::size_t hi0 = chunk < n ? chunk : n;
    for (std::size_t i = 0; i < hi0; ++i) body(i);
    for (auto& t : pool) t.join();
}

// Range form for fine-grained loops: one call per worker instead of one
// std::function dispatch per index.
inline void parallel_for_range(std::size_t n,
                               const std::function<void(std::size_t, std::size_t)>& body) {
    static const std::size_t hw = std::thread::hardware_concurrency() > 0
                                      ? std::thread::hardware_concurrency()
                                      : 1;
    if (n == 0) return;
    const std::size_t workers = hw < n ? hw : n;
    if (workers <= 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 1; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = lo + chunk < n ? lo + chunk : n;
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(0, chunk < n ? chunk : n);
    for (auto& t : pool) t.join();
}

}  // namespace mbic
