#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace frcnn {

using Scalar = double;

// Label value marking pixels excluded from losses and metrics.
constexpr std::size_t kIgnoreIndex = 255;

[[noreturn]] inline void fail(const std::string& msg) {
    throw std::runtime_error(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

// Stream derivation for per-sample / per-purpose RNGs.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    return splitmix64(master ^ splitmix64(stream + 0x51ed270b7a9c1d3bull));
}

// mt19937_64 raw output is portable; the distributions are hand-rolled so
// generated values are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    Scalar uniform() {  // [0,1)
        return static_cast<Scalar>(bits() >> 11) * 0x1.0p-53;
    }

    Scalar uniform(Scalar lo, Scalar hi) { return lo + (hi - lo) * uniform(); }

    std::size_t uniform_index(std::size_t n) {
        // modulo bias is irrelevant for n << 2^64
        return static_cast<std::size_t>(bits() % static_cast<std::uint64_t>(n));
    }

    Scalar normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        Scalar u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const Scalar r = std::sqrt(-2.0 * std::log(u1));
        const Scalar a = 2.0 * 3.14159265358979323846 * u2;
        cached_ = r * std::sin(a);
        have_cached_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_index(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_cached_ = false;
    Scalar cached_ = 0.0;
};

inline unsigned worker_count() {
    if (const char* env = std::getenv("FRCNN_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw ? hw : 1;
}

// Static partition across workers; results must not depend on the split.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const unsigned workers = std::min<std::size_t>(worker_count(), n ? n : 1);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t i = w; i < n; i += workers) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

inline bool all_finite(const std::vector<Scalar>& v) {
    for (Scalar x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

#ifndef NDEBUG
#define FRCNN_DEBUG_FINITE(vec, what) \
    do { \
        if (!::frcnn::all_finite(vec)) ::frcnn::fail(std::string("non-finite values after ") + (what)); \
    } while (0)
#else
#define FRCNN_DEBUG_FINITE(vec, what) \
    do { \
    } while (0)
#endif

}  // namespace frcnn
