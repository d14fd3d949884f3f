#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace skyladder {

/// Keeps large activation buffers on the heap between steps instead of
/// returning them to the OS on every free. A no-op outside glibc.
inline void retain_large_allocations() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 32 << 20);  // glibc maximum on 64-bit
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

inline std::atomic<int>& thread_count_setting() {
    static std::atomic<int> count{[] {
        if (const char* env = std::getenv("SKYLADDER_THREADS")) {
            try {
                return std::max(1, std::stoi(env));
            } catch (...) {
            }
        }
        return 1;
    }()};
    return count;
}

/// Worker count for parallel_for; defaults to $SKYLADDER_THREADS or 1.
inline int num_threads() { return thread_count_setting().load(); }
inline void set_num_threads(int n) { thread_count_setting().store(std::max(1, n)); }

/// Runs body(i) for i in [0, n). Work items must write disjoint memory; the
/// result is then independent of the thread count.
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    auto workers = std::min<std::size_t>(static_cast<std::size_t>(num_threads()), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (auto i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace skyladder
