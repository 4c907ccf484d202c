#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "sepp/common.hpp"

// Deterministic random numbers. Everything is built on splitmix64 so that
// identical seeds give identical streams on every platform and build;
// std::random distributions are not reproducible across standard libraries.

namespace sepp::rng {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ull;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Order-sensitive hash combine for deriving sub-seeds from (seed, salt) pairs.
inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ (splitmix64(b) + kGolden + (a << 6) + (a >> 2)));
}

/// Sequential generator over the splitmix64 stream.
class Stream {
public:
    explicit Stream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += kGolden;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
        return x ^ (x >> 31);
    }

    /// Uniform in [0, 1).
    double next_unit() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * next_unit();
    }

    /// Uniform integer in [0, n); n must be positive.
    std::uint64_t below(std::uint64_t n) {
        require(n > 0, "rng::Stream::below: n must be positive");
        // 128-bit multiply keeps the mapping unbiased enough for our sizes.
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Standard normal via Box-Muller.
    double normal() {
        double u1 = next_unit();
        while (u1 <= 0.0) {
            u1 = next_unit();
        }
        const double u2 = next_unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

private:
    std::uint64_t state_;
};

/// Fisher-Yates shuffle driven by a fresh stream, so the result depends only
/// on (seed, v.size()).
template <typename T>
void shuffle(std::vector<T>& v, std::uint64_t seed) {
    Stream s(seed);
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(s.below(i));
        std::swap(v[i - 1], v[j]);
    }
}

/// First k entries of a seeded permutation of [0, n); order is the draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           std::uint64_t seed) {
    require(k <= n, "sample_without_replacement: k=", k, " exceeds n=", n);
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) {
        pool[i] = i;
    }
    Stream s(seed);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(s.below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
}

} // namespace sepp::rng
