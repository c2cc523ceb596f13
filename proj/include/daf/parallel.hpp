#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace daf {

// Runs fn(i) for every i in [0, n) across at most `threads` workers. Worker w
// takes the strided slice w, w+T, w+2T, ... so the item-to-worker assignment
// is a pure function of (n, threads); callers that fold results in item order
// therefore see output independent of how the work was scheduled. The first
// pending exception (lowest worker index) is rethrown after all workers join.
inline void parallel_items(int n, int threads, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    threads = std::clamp(threads, 1, n);
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::exception_ptr> errs(static_cast<size_t>(threads));
    std::vector<std::thread> pool;
    pool.reserve(size_t(threads));
    for (int w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = w; i < n; i += threads) fn(i);
            } catch (...) {
                errs[size_t(w)] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errs)
        if (e) std::rethrow_exception(e);
}

}  // namespace daf
