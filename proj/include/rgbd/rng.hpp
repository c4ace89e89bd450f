#ifndef RGBD_RNG_HPP
#define RGBD_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace rgbd {

// Deterministic RNG. mt19937_64's bit stream is pinned by the standard;
// the distributions below are hand-rolled so results do not depend on the
// standard library's unspecified distribution algorithms.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() { return (double)(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // integer in [lo, hi] inclusive
    int64_t randint(int64_t lo, int64_t hi) {
        return lo + (int64_t)(uniform() * (double)(hi - lo + 1));
    }

    // Box-Muller; two uniforms consumed per draw, no cached spare so the
    // stream position is a pure function of the call count.
    double normal() {
        double u1 = ((double)(gen_() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // independent child stream
    Rng fork(uint64_t stream) {
        uint64_t s = next_u64();
        return Rng(s ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    }

private:
    std::mt19937_64 gen_;
};

// FNV-1a, used for config hashes and identity-derived parameters.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const uint8_t* p = (const uint8_t*)data;
    for (size_t i = 0; i < n; i++) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace rgbd

#endif
