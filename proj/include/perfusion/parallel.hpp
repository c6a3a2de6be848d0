// parallel.hpp
//
// Deterministic work sharing: jobs are indexed and side-effect free except
// for writes to their own output slot, so results are identical for any
// thread count.

#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace perfusion {

inline int resolve_threads(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

template <typename Fn>
void parallel_for(int n_jobs, int n_threads, Fn&& fn) {
    n_threads = resolve_threads(n_threads);
    if (n_threads <= 1 || n_jobs <= 1) {
        for (int i = 0; i < n_jobs; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n_jobs) return;
            fn(i);
        }
    };
    std::vector<std::thread> pool;
    const int n = std::min(n_threads, n_jobs);
    pool.reserve(static_cast<size_t>(n));
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

} // namespace perfusion
