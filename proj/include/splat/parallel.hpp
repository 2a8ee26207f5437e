// Copyright Contributors to the splat project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "splat/types.hpp"

namespace splat {

/// Worker count: `requested` if positive, else the hardware concurrency;
/// SPLAT_THREADS, when set to a positive integer, caps the result.
inline int worker_threads(int requested = 0) {
    int n = requested > 0 ? requested : static_cast<int>(std::thread::hardware_concurrency());
    n = std::max(n, 1);
    if (const char *env = std::getenv("SPLAT_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) {
            n = std::min(n, cap);
        }
    }
    return n;
}

/// Runs body(i) for i in [0, count). Work items are claimed dynamically, so
/// body must only write state owned by item i.
template <typename Body> void parallel_for(Index count, int threads, Body &&body) {
    threads = static_cast<int>(std::min<Index>(std::max(threads, 1), std::max<Index>(count, 1)));
    if (threads == 1) {
        for (Index i = 0; i < count; ++i) {
            body(i);
        }
        return;
    }
    std::atomic<Index> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
        try {
            for (Index i = next++; i < count; i = next++) {
                body(i);
            }
        } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) {
                failure = std::current_exception();
            }
            next = count;
        }
    };
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(threads - 1));
    for (int t = 1; t < threads; ++t) {
        pool.emplace_back(worker);
    }
    worker();
    pool.clear();
    if (failure) {
        std::rethrow_exception(failure);
    }
}

} // namespace splat
