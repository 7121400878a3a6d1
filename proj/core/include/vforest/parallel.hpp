#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace vf {

// Process-wide thread budget; the CLI sets it from --threads / --deterministic.
int worker_threads();
void set_worker_threads(int n);

// Splits [0,n) into a fixed number of chunks and runs fn(chunk, begin, end).
// The chunk partition does not depend on the thread count, so per-chunk
// partial results merged in chunk order reproduce the sequential result.
inline void parallel_chunks(std::size_t n, std::size_t chunk_count,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (chunk_count == 0) chunk_count = 1;
    if (chunk_count > n) chunk_count = n;

    const int threads = worker_threads();
    auto chunk_range = [&](std::size_t c, std::size_t& b, std::size_t& e) {
        b = c * n / chunk_count;
        e = (c + 1) * n / chunk_count;
    };

    if (threads <= 1 || chunk_count == 1) {
        for (std::size_t c = 0; c < chunk_count; ++c) {
            std::size_t b, e;
            chunk_range(c, b, e);
            fn(c, b, e);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            std::size_t c = next.fetch_add(1);
            if (c >= chunk_count) break;
            std::size_t b, e;
            chunk_range(c, b, e);
            try {
                fn(c, b, e);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                break;
            }
        }
    };
    std::vector<std::thread> pool;
    const int use = static_cast<int>(std::min<std::size_t>(threads, chunk_count));
    pool.reserve(use);
    for (int t = 0; t < use; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

}  // namespace vf
