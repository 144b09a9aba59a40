#pragma once

#include <cstdint>
#include <random>

namespace hncse {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Deterministic derivation of an independent RNG stream from a base seed
/// and up to two stream keys. Used for dropout masks and diagnostics so
/// their draws never interleave with the run RNG.
inline std::mt19937_64 derive_rng(std::uint64_t seed, std::uint64_t key1, std::uint64_t key2 = 0) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(key1 ^ splitmix64(key2))));
}

}  // namespace hncse
