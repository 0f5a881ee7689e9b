#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace blockmem {

/// Thread cap for independent trials: BLOCKMEM_THREADS if set, otherwise the
/// hardware concurrency.
inline unsigned trial_threads() {
    if (const char* env = std::getenv("BLOCKMEM_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<unsigned>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

/// Runs fn(i) for i in [0, n) on up to max_threads workers. Each index is
/// processed exactly once; results must be written to index-keyed slots so
/// the outcome does not depend on scheduling.
inline void run_parallel(std::size_t n, const std::function<void(std::size_t)>& fn,
                         unsigned max_threads = 0) {
    if (max_threads == 0) max_threads = trial_threads();
    const unsigned workers =
        std::min<unsigned>(max_threads, static_cast<unsigned>(std::max<std::size_t>(n, 1)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace blockmem
