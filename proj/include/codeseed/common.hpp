#pragma once

// Shared plumbing: error types, deterministic RNG, worker-count handling.

#include <cstdint>
#include <cstdlib>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace codeseed {

// Runtime failure inside the pipeline (I/O, format, numeric breakdown). Maps
// to exit code 1 at the CLI boundary.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad invocation or malformed user input. Maps to exit code 2.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void msg_append(std::ostringstream&) {}
template <class T, class... Rest>
void msg_append(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    msg_append(os, rest...);
}
}  // namespace detail

template <class... Parts>
std::string msg(const Parts&... parts) {
    std::ostringstream os;
    detail::msg_append(os, parts...);
    return os.str();
}

// Deterministic RNG. Draws are derived from raw mt19937_64 words by hand;
// the standard <random> distributions are implementation-defined and would
// break the byte-identical-reruns contract.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1), 53-bit resolution
    double next_double() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // uniform integer in [0, n), n > 0
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(eng_()) * static_cast<unsigned __int128>(n)) >> 64);
    }

    bool bernoulli(double p) { return next_double() < p; }

private:
    std::mt19937_64 eng_;
};

// Fisher-Yates with our own index draws.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(v[i - 1], v[j]);
    }
}

// Worker cap: CODESEED_THREADS when set, otherwise the hardware count.
// Parallel sections must write disjoint state so results never depend on it.
inline int worker_count() {
    static const int cached = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        if (const char* env = std::getenv("CODESEED_THREADS")) {
            char* end = nullptr;
            long v = std::strtol(env, &end, 10);
            if (end != env && v >= 1 && v < 1024 && v < hw) hw = static_cast<int>(v);
        }
        return hw;
    }();
    return cached;
}

// Runs f(lo, hi) over contiguous chunks of [0, n). f must only touch state
// owned by its chunk.
template <class F>
void parallel_chunks(std::size_t n, int workers, F&& f) {
    if (workers < 2 || n < 2) {
        f(std::size_t{0}, n);
        return;
    }
    if (static_cast<std::size_t>(workers) > n) workers = static_cast<int>(n);
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    std::size_t chunk = (n + static_cast<std::size_t>(workers) - 1) / static_cast<std::size_t>(workers);
    for (int w = 1; w < workers; ++w) {
        std::size_t lo = static_cast<std::size_t>(w) * chunk;
        if (lo >= n) break;
        std::size_t hi = std::min(n, lo + chunk);
        pool.emplace_back([&f, lo, hi] { f(lo, hi); });
    }
    f(std::size_t{0}, std::min(n, chunk));
    for (auto& t : pool) t.join();
}

}  // namespace codeseed
