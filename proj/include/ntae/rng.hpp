#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

#include "ntae/tensor.hpp"

namespace ntae {

// Every random draw in the repository flows through this generator:
// xoshiro256++ over a splitmix64-expanded 64-bit seed. Normal variates use
// the Box-Muller transform, so sequences are bit-identical across platforms
// (std::normal_distribution is implementation-defined and unusable here).

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

/// Stable sub-seed derivation: mixes a base seed with a purpose tag and
/// optional integer salts. Used to give every stream (data, init, shuffle,
/// ...) its own deterministic seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                 std::initializer_list<std::uint64_t> salts = {}) {
    std::uint64_t s = seed ^ fnv1a64(tag);
    std::uint64_t out = splitmix64(s);
    for (std::uint64_t v : salts) {
        s ^= v;
        out = splitmix64(s);
    }
    return out;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : state_) w = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    /// Uniform in [0, 1), 53-bit resolution.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be positive.
    Index below(Index n) { return static_cast<Index>(next_u64() % static_cast<std::uint64_t>(n)); }

    /// Standard normal via Box-Muller; generates pairs, caches the spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = uniform01();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {  // Fisher-Yates
        for (Index i = static_cast<Index>(v.size()) - 1; i > 0; --i) {
            const Index j = below(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t state_[4];
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline void fill_normal(Rng& rng, double* dst, Index count, double stddev = 1.0) {
    for (Index i = 0; i < count; ++i) dst[i] = stddev * rng.normal();
}

/// Seed-reproducible standard-normal tensor.
inline Tensord random_normal(Shape shape, std::uint64_t seed) {
    Tensord t(std::move(shape));
    Rng rng(seed);
    fill_normal(rng, t.data(), t.size());
    return t;
}

inline Tensord random_uniform(Shape shape, std::uint64_t seed) {
    Tensord t(std::move(shape));
    Rng rng(seed);
    for (Index i = 0; i < t.size(); ++i) t[i] = rng.uniform01();
    return t;
}

}  // namespace ntae
