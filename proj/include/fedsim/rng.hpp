#pragma once

// Seed derivation and deterministic RNG helpers. A single master seed is
// split into named sub-streams so that changing e.g. the noise seed does not
// perturb corpus generation.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fedsim {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derives a sub-seed from (seed, tag). Tags are stable strings like
// "corpus", "canary", "init", "sampling/round=12".
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ fnv1a(tag));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::uint64_t index) {
    return splitmix64(derive_seed(seed, tag) + 0x632be59bd9b4e019ULL * index);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed) { return Rng{seed}; }

// Uniform integer in [0, n). Hand-rolled so results do not depend on the
// standard library's distribution implementation.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Uniform double in [0, 1).
inline double uniform_real(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform double in [lo, hi).
inline double uniform_real(Rng& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_real(rng);
}

// Standard normal via Box-Muller (one value per call, no cached spare).
inline double normal(Rng& rng) {
    double u1 = uniform_real(rng);
    while (u1 == 0.0) u1 = uniform_real(rng);
    const double u2 = uniform_real(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
}

template <typename T>
void shuffle(Rng& rng, std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace fedsim
