#include "evm/threading.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace evm {

namespace {
std::atomic<int> g_max_threads{0};  // 0 = uninitialized, use hardware
}

int max_threads() {
    int n = g_max_threads.load();
    if (n > 0) return n;
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void set_max_threads(int n) { g_max_threads.store(std::max(1, n)); }

void parallel_for(std::int64_t n, std::int64_t min_chunk,
                  const std::function<void(std::int64_t, std::int64_t)>& body) {
    if (n <= 0) return;
    min_chunk = std::max<std::int64_t>(1, min_chunk);
    std::int64_t workers = std::min<std::int64_t>(max_threads(), (n + min_chunk - 1) / min_chunk);
    if (workers <= 1) {
        body(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers - 1));
    std::int64_t base = n / workers, rem = n % workers, begin = 0;
    for (std::int64_t w = 0; w < workers; ++w) {
        std::int64_t len = base + (w < rem ? 1 : 0);
        std::int64_t end = begin + len;
        if (w + 1 == workers) {
            body(begin, end);
        } else {
            pool.emplace_back([&body, begin, end] { body(begin, end); });
        }
        begin = end;
    }
    for (auto& t : pool) t.join();
}

}  // namespace evm
