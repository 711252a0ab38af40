#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dnm {

/// Worker cap: DNM_THREADS env var when set, hardware concurrency otherwise.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("DNM_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
        return 1;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

/// Runs fn(i) for i in [0, n). Work items must be independent; results that
/// feed a reduction must be combined by the caller in index order so the
/// outcome does not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto body = [&] {
        std::size_t i;
        while (!failed.load(std::memory_order_relaxed) &&
               (i = next.fetch_add(1)) < n) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                failed.store(true);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(body);
    body();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

/// Fixed batch-partition size. Chunks are reduced in index order, which keeps
/// gradient sums bit-identical for every DNM_THREADS setting.
inline constexpr std::size_t kBatchChunk = 16;

struct ChunkRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

inline std::vector<ChunkRange> fixed_chunks(std::size_t n, std::size_t chunk = kBatchChunk) {
    std::vector<ChunkRange> out;
    for (std::size_t b = 0; b < n; b += chunk) {
        out.push_back({b, std::min(b + chunk, n)});
    }
    return out;
}

}  // namespace dnm
