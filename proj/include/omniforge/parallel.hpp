#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace omniforge {

// Chunked parallel map over [0, n). Results must be written into
// caller-owned slots indexed by i so the outcome is independent of
// scheduling; threads <= 1 runs serially.
template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    if (threads <= 1 || n < 2) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    size_t workers = std::min<size_t>(static_cast<size_t>(threads), n);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (size_t i = w; i < n; i += workers) fn(i);
        });
    }
    for (auto& t : pool) t.join();
}

}  // namespace omniforge
