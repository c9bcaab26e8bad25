#pragma once

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace artifit::detail {

// Worker cap: ARTIFIT_THREADS when set, hardware concurrency otherwise.
inline int thread_count() {
    static const int n = [] {
        if (const char* env = std::getenv("ARTIFIT_THREADS")) {
            const int v = std::atoi(env);
            if (v > 0) return v;
        }
        const unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }();
    return n;
}

// Runs fn(chunk_index, begin, end) over [0, n) split into fixed-size chunks.
// Chunk boundaries never depend on the worker count, so per-chunk results are
// reproducible under any ARTIFIT_THREADS value; callers must either write to
// disjoint outputs or combine per-chunk partials in chunk order.
template <class F>
inline void parallel_chunks(std::size_t n, std::size_t chunk_size, F&& fn) {
    if (n == 0) return;
    const std::size_t n_chunks = (n + chunk_size - 1) / chunk_size;
    const int workers =
        std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n_chunks);
    if (workers <= 1) {
        for (std::size_t c = 0; c < n_chunks; ++c)
            fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        while (true) {
            const std::size_t c = next.fetch_add(1);
            if (c >= n_chunks) return;
            fn(c, c * chunk_size, std::min(n, (c + 1) * chunk_size));
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (int i = 1; i < workers; ++i) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
}

} // namespace artifit::detail
