#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace concurl {

using Rng = std::mt19937_64;

// Derives an independent generator from a base seed and any number of
// stream identifiers (epoch, step, view, ...).
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> streams = {}) {
    std::vector<std::uint32_t> words;
    words.reserve(2 + 2 * streams.size());
    words.push_back(static_cast<std::uint32_t>(seed));
    words.push_back(static_cast<std::uint32_t>(seed >> 32));
    for (auto s : streams) {
        words.push_back(static_cast<std::uint32_t>(s));
        words.push_back(static_cast<std::uint32_t>(s >> 32));
    }
    std::seed_seq mixed(words.begin(), words.end());
    return Rng(mixed);
}

inline double uniform(Rng& rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(rng);
}

inline bool bernoulli(Rng& rng, double p) {
    if (p <= 0.0) {
        return false;
    }
    if (p >= 1.0) {
        return true;
    }
    return std::bernoulli_distribution(p)(rng);
}

}  // namespace concurl
