#pragma once

#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace conns {

namespace detail {

template <typename Body>
inline void run_partitioned(int n, int threads, const Body& body) {
    int workers = std::min(threads, n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::exception_ptr first_error;
    std::mutex err_mu;
    for (int t = 0; t < workers; ++t) {
        int lo = static_cast<int>(static_cast<long long>(n) * t / workers);
        int hi = static_cast<int>(static_cast<long long>(n) * (t + 1) / workers);
        pool.emplace_back([lo, hi, t, &body, &first_error, &err_mu] {
            try {
                for (int i = lo; i < hi; ++i) body(i, t);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace detail

// Run fn(i) for i in [0, n). threads <= 1 runs serially (the bitwise
// reproducible reference mode); otherwise each worker gets one contiguous
// block of indices. Callers must ensure disjoint writes or use per-thread
// buffers reduced in thread order afterwards.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    detail::run_partitioned(n, threads, [&fn](int i, int) { fn(i); });
}

// Same partitioning but the callback also receives the worker index, for
// per-thread accumulation buffers.
inline void parallel_for_workers(int n, int threads, const std::function<void(int, int)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i, 0);
        return;
    }
    detail::run_partitioned(n, threads, fn);
}

}  // namespace conns
