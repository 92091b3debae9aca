#include "structvol/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace structvol {

unsigned thread_count() {
    static const unsigned cached = [] {
        unsigned hw = std::max(1u, std::thread::hardware_concurrency());
        if (const char* env = std::getenv("STRUCTVOL_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return std::min<unsigned>(unsigned(v), 256u);
        }
        return hw;
    }();
    return cached;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    unsigned workers = thread_count();
    if (workers <= 1 || n < 4096) {
        body(0, n);
        return;
    }
    workers = std::min<unsigned>(workers, unsigned((n + 4095) / 4096));
    std::size_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned i = 0; i < workers; ++i) {
        std::size_t begin = std::size_t(i) * chunk;
        std::size_t end = std::min(n, begin + chunk);
        if (begin >= end) break;
        pool.emplace_back([&body, begin, end] { body(begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace structvol
