// Deterministic RNG used throughout training and tests.
//
// xoshiro256++ seeded via splitmix64. Hand-rolled rather than <random> so that
// streams are reproducible across standard library implementations; every
// sampling decision in a run derives from the run seed through mix64().

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>

namespace postrl {

constexpr std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Order-sensitive combiner for deriving stream seeds: mix64(seed, a, b, ...).
constexpr std::uint64_t mix64(std::uint64_t seed) { return seed; }

template <typename... Rest>
constexpr std::uint64_t mix64(std::uint64_t seed, std::uint64_t head, Rest... rest) {
    std::uint64_t s = seed ^ (head + 0x9e3779b97f4a7c15ull + (seed << 6) + (seed >> 2));
    return mix64(splitmix64(s), rest...);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
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

    // Uniform in [0, 1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    bool bernoulli(double p) { return uniform01() < p; }

    // Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        double u1 = uniform01();
        const double u2 = uniform01();
        while (u1 <= 0.0) u1 = uniform01();  // log(0) guard
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Index i with probability weights[i] / sum(weights). Weights need not be
    // normalized; scan order makes the draw deterministic.
    std::size_t categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        const double target = uniform01() * total;
        double cum = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            cum += weights[i];
            if (target < cum) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

  private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::uint64_t state_[4]{};
};

}  // namespace postrl
