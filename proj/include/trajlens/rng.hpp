#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace trajlens {

// Deterministic random numbers with output fully pinned by this header, so
// logs and golden files do not depend on the standard library's
// implementation of engines or distributions.

/// One splitmix64 step (Steele, Lea, Vigna). Advances `state` and returns
/// the next 64-bit word.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Stateless mix of a seed with up to two stream labels. Used to derive
/// independent streams (init vs. data vs. sampler) from one user seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream_a,
                              std::uint64_t stream_b = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64_next(s);
    s ^= stream_a * 0x9e3779b97f4a7c15ULL + h;
    h = splitmix64_next(s);
    s ^= stream_b * 0xd1b54a32d192ed03ULL + h;
    return splitmix64_next(s);
}

/// Sequential splitmix64 stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64_next(state_); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Uniform integer in [0, n). n must be > 0. Uses rejection so the
    /// result is unbiased and identical on every platform.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    /// Standard normal via Box-Muller (the cosine branch only, one draw per
    /// pair of uniforms, so the stream layout is trivial to reason about).
    double normal() {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        constexpr double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

private:
    std::uint64_t state_;
};

/// Fisher-Yates permutation of [0, n) driven by a keyed stream, a pure
/// function of (seed, key). The sampler uses key = epoch index so the batch
/// order of any epoch can be regenerated without replaying earlier epochs.
inline std::vector<std::uint32_t> keyed_permutation(std::uint64_t seed,
                                                    std::uint64_t key,
                                                    std::uint32_t n) {
    std::vector<std::uint32_t> perm(n);
    for (std::uint32_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(mix_seed(seed, 0x7065726dULL /*'perm'*/, key));
    for (std::uint32_t i = n; i > 1; --i) {
        const std::uint32_t j = static_cast<std::uint32_t>(rng.below(i));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

}  // namespace trajlens
