#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace embanet {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct NonDivisibleChannels : Error { using Error::Error; };
struct GroupMismatch : Error { using Error::Error; };
struct InvalidKernel : Error { using Error::Error; };
struct InvalidEpsilon : Error { using Error::Error; };
struct NonFiniteValue : Error { using Error::Error; };
struct ZeroVariance : Error { using Error::Error; };
struct UnregisteredOp : Error { using Error::Error; };
struct UnknownPreset : Error { using Error::Error; };
struct SpecValidation : Error { using Error::Error; };
struct IllegalWidth : Error { using Error::Error; };
struct DataFormat : Error { using Error::Error; };
struct LabelOutOfRange : Error { using Error::Error; };
struct UnknownLayer : Error { using Error::Error; };

/// Worker cap: EMBANET_THREADS env var, else hardware concurrency.
inline int worker_count() {
    if (const char* env = std::getenv("EMBANET_THREADS")) {
        int v = std::atoi(env);
        if (v > 0) return v;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Runs fn(i) for i in [0, count). Splits into contiguous chunks so each
/// index is processed exactly once; output must be disjoint per index for
/// deterministic results.
inline void parallel_for(std::int64_t count, const std::function<void(std::int64_t)>& fn) {
    int workers = worker_count();
    if (workers <= 1 || count < 2) {
        for (std::int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    if (workers > count) workers = static_cast<int>(count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    std::int64_t chunk = (count + workers - 1) / workers;
    for (int t = 0; t < workers; ++t) {
        std::int64_t lo = t * chunk;
        std::int64_t hi = std::min(count, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn] {
            for (std::int64_t i = lo; i < hi; ++i) fn(i);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace embanet
