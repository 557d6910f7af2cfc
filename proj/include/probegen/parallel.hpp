#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace probegen {

// Coarse fan-out used for independent units of work (zoo models, ablation
// cells, per-seed runs). Each unit is computed exactly as it would be
// serially, so results do not depend on the thread count; numeric kernels
// themselves stay single-threaded.
inline std::atomic<int>& thread_count_storage() {
    static std::atomic<int> count{0};  // 0 = hardware concurrency
    return count;
}

inline void set_thread_count(int n) { thread_count_storage().store(n < 0 ? 0 : n); }

inline int thread_count() {
    int n = thread_count_storage().load();
    if (n == 0) {
        unsigned hw = std::thread::hardware_concurrency();
        n = hw == 0 ? 1 : static_cast<int>(hw);
    }
    return n;
}

inline bool& in_parallel_region() {
    thread_local bool flag = false;
    return flag;
}

template <typename F>
void parallel_for(std::size_t n, F&& fn) {
    int workers = thread_count();
    if (n == 0) return;
    if (workers <= 1 || n == 1 || in_parallel_region()) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto run = [&]() {
        in_parallel_region() = true;
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            fn(i);
        }
        in_parallel_region() = false;
    };
    std::vector<std::thread> pool;
    int spawn = std::min<std::size_t>(static_cast<std::size_t>(workers), n) - 1;
    pool.reserve(spawn);
    for (int t = 0; t < spawn; ++t) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
}

}  // namespace probegen
