#pragma once

#include <cstdint>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace slateope {

// Deterministic counter-free random stream. Draw routines are implemented on
// top of the raw 64-bit output so results do not depend on the standard
// library's <random> distribution internals.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        // splitmix64 expansion of the seed into the xoshiro256** state.
        uint64_t x = seed;
        for (auto& word : state_) word = splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two uniforms per call and discards the spare so
    // every call reads a fixed number of raw draws.
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    double gumbel() {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(-std::log(u));
    }

    // Index draw from an unnormalized non-negative weight vector.
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw std::invalid_argument("categorical: weights sum to zero");
        double u = uniform() * total;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            u -= weights[i];
            if (u < 0.0) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<uint64_t>(n)); }

private:
    static constexpr double kPi = 3.14159265358979323846;

    static uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }

    static uint64_t splitmix64(uint64_t& x) {
        uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    uint64_t state_[4];
};

// Substream derivation: every stochastic consumer is keyed by
// (master seed, purpose tag, indices) so adding consumers or reordering
// sweeps never perturbs the draws of existing ones.
inline uint64_t derive_seed(uint64_t master, std::string_view tag,
                            std::initializer_list<uint64_t> indices = {}) {
    uint64_t h = 0xcbf29ce484222325ULL ^ master;
    auto mix = [&h](uint64_t v) {
        h ^= v + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        h *= 0x100000001b3ULL;
    };
    for (char c : tag) mix(static_cast<uint64_t>(static_cast<unsigned char>(c)));
    mix(0xfeedULL);  // separator between tag and indices
    for (uint64_t v : indices) mix(v);
    // final avalanche
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ULL;
    h ^= h >> 33;
    return h;
}

inline Rng substream(uint64_t master, std::string_view tag,
                     std::initializer_list<uint64_t> indices = {}) {
    return Rng(derive_seed(master, tag, indices));
}

}  // namespace slateope
