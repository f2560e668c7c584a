#include "srkd/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>

namespace srkd {

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += "]";
    return out;
}

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) {
        if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

size_t thread_count() {
    static const size_t n = [] {
        if (const char* env = std::getenv("SRKD_THREADS")) {
            long v = std::strtol(env, nullptr, 10);
            if (v >= 1) return static_cast<size_t>(std::min<long>(v, 64));
        }
        size_t hw = std::thread::hardware_concurrency();
        return std::clamp<size_t>(hw, 1, 8);
    }();
    return n;
}

void parallel_for(size_t n, const std::function<void(size_t, size_t)>& block_fn) {
    size_t workers = std::min(thread_count(), n);
    if (workers <= 1 || n == 0) {
        if (n > 0) block_fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    size_t chunk = (n + workers - 1) / workers;
    for (size_t w = 0; w < workers; ++w) {
        size_t lo = w * chunk;
        size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, lo, hi] { block_fn(lo, hi); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace srkd
