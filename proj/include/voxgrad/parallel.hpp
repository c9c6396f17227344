#pragma once

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace voxgrad {

// Worker budget: hardware concurrency, optionally capped by VOXGRAD_THREADS.
inline unsigned worker_count() {
    static const unsigned cached = [] {
        unsigned n = std::max(1u, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("VOXGRAD_THREADS")) {
            char* end = nullptr;
            const long v = std::strtol(env, &end, 10);
            if (end != env && v >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(v));
        }
        return n;
    }();
    return cached;
}

namespace detail {
inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}
}  // namespace detail

// Runs fn(i) for i in [0, n). Every index owns disjoint output state and runs
// its own internal loops in a fixed order, so results are identical for any
// worker count. Nested invocations fall back to the serial path.
template <typename Fn>
inline void parallel_for(std::size_t n, Fn&& fn) {
    if (n == 0) return;
    const unsigned workers = worker_count();
    if (workers <= 1 || n < 2 || detail::in_parallel_region()) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const unsigned used = static_cast<unsigned>(std::min<std::size_t>(workers, n));
    std::vector<std::thread> pool;
    pool.reserve(used);
    for (unsigned t = 0; t < used; ++t) {
        pool.emplace_back([&fn, t, used, n] {
            detail::in_parallel_region() = true;
            for (std::size_t i = t; i < n; i += used) fn(i);
            detail::in_parallel_region() = false;
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace voxgrad
