#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <utility>

// Distribution helpers with a fixed algorithm, so seeded streams agree across
// standard libraries (std::uniform_*_distribution and std::shuffle do not).

namespace lgf::rng {

/// Uniform in [0, 1) from the top 53 bits.
inline double unit(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

/// Uniform in [lo, hi).
inline double uniform(std::mt19937_64& g, double lo, double hi) { return lo + (hi - lo) * unit(g); }

/// Uniform integer in [0, n) by rejection; n > 0.
inline std::uint64_t index(std::mt19937_64& g, std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do r = g();
    while (r >= limit);
    return r % n;
}

/// Fisher–Yates.
template <class T>
void shuffle(std::span<T> v, std::mt19937_64& g) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(g, i)]);
}

} // namespace lgf::rng
