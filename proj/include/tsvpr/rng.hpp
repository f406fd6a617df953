#pragma once

#include <cstdint>
#include <random>

#include "tsvpr/tensor.hpp"

namespace tsvpr {

using Rng = std::mt19937_64;

inline void fill_normal(Tensor& t, double stddev, Rng& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& v : t.values()) v = dist(rng);
}

inline void fill_uniform(Tensor& t, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.values()) v = dist(rng);
}

/// Derives an independent stream for a named purpose from a base seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace tsvpr
