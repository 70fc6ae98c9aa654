// Copyright 2026 The QPINN Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace qpinn {

/// Worker count from QPINN_THREADS (0 or unset means hardware concurrency).
inline std::size_t worker_count() {
    std::size_t requested = 0;
    if (const char *env = std::getenv("QPINN_THREADS"); env != nullptr) {
        try {
            requested = static_cast<std::size_t>(std::stoul(env));
        } catch (const std::exception &) {
            requested = 0;
        }
    }
    if (requested == 0) {
        requested = std::max<std::size_t>(1, std::thread::hardware_concurrency());
    }
    return requested;
}

/**
 * Runs body(i) for i in [0, n) over contiguous chunks. Each index is written
 * by exactly one worker, so results that are stored by index are independent
 * of scheduling.
 */
template <typename Body>
void parallel_for(std::size_t n, Body &&body, std::size_t workers = worker_count()) {
    workers = std::min(workers, n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            body(i);
        }
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
        const std::size_t begin = w * chunk;
        const std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) {
            break;
        }
        pool.emplace_back([&, begin, end] {
            try {
                for (std::size_t i = begin; i < end; ++i) {
                    body(i);
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        });
    }
    for (auto &t : pool) {
        t.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

} // namespace qpinn
