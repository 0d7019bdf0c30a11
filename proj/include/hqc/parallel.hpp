#pragma once

#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hqc {

/// Runs body(i) for i in [begin, end) on up to hardware_concurrency threads.
/// Each index is handled exactly once; callers write to disjoint slots, so the
/// result does not depend on scheduling. The first exception is rethrown.
template <class Body>
void parallel_for(int begin, int end, Body&& body, int min_chunk = 16) {
    const int n = end - begin;
    if (n <= 0) return;
    const int hw = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    const int threads = std::min(hw, std::max(1, n / std::max(1, min_chunk)));
    if (threads <= 1) {
        for (int i = begin; i < end; ++i) body(i);
        return;
    }
    std::exception_ptr err;
    std::mutex mu;
    std::vector<std::thread> pool;
    const int chunk = (n + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const int lo = begin + t * chunk, hi = std::min(end, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] {
            try {
                for (int i = lo; i < hi; ++i) body(i);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

}  // namespace hqc
