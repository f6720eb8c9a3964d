#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "cnnf/error.hpp"

namespace cnnf {

// Deterministic counter-based generator (SplitMix64).
//
// Algorithm: the 64-bit state advances by the fixed increment
// 0x9E3779B97F4A7C15 per draw and the output is the SplitMix64 finalizer
// of the new state:
//
//   z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27;  z *= 0x94D049BB133111EB;
//   z ^= z >> 31;
//
// Uniform doubles take the top 53 bits: (u64 >> 11) * 2^-53, giving [0, 1).
// Bounded integers use the multiply-shift reduction (hi32(x) * n) >> 32.
// Gaussians use Box-Muller (cosine branch only, two uniforms per value,
// the first mapped into (0, 1] so log() never sees zero).
//
// All derived output is a pure function of the 64-bit state, so a stream is
// reproduced exactly from a stored seed on any platform.
class Rng {
public:
    static constexpr std::uint64_t kIncrement = 0x9E3779B97F4A7C15ull;

    explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

    static constexpr std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t next_u64() {
        state_ += kIncrement;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, bound); bound >= 1. One draw.
    std::uint32_t next_below(std::uint32_t bound) {
        const std::uint64_t hi = next_u64() >> 32;
        return static_cast<std::uint32_t>((hi * bound) >> 32);
    }

    // One Gaussian via Box-Muller; consumes exactly two draws.
    double next_normal(double mean, double stddev) {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    std::uint64_t state() const { return state_; }
    void set_state(std::uint64_t s) { state_ = s; }

private:
    std::uint64_t state_;
};

// Independent stream families derived from one root seed. The constants are
// part of the format: checkpoints store only the root seed.
enum class Stream : std::uint64_t {
    kInit = 1,     // weight initialization (layer index)
    kShuffle = 2,  // (epoch)
    kAugment = 3,  // (epoch, sample index)
    kDropout = 4,  // (layer index, step)
    kSynth = 5,    // synthetic dataset generation (sample index)
};

// Stream splitting: fold each key word through the finalizer so distinct
// (stream, a, b) tuples land on unrelated state values.
//   state = mix(root ^ mix(id)); state = mix(state ^ mix(a)); state = mix(state ^ mix(b))
inline Rng make_stream(std::uint64_t root_seed, Stream s, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t st = Rng::mix(root_seed ^ Rng::mix(static_cast<std::uint64_t>(s)));
    st = Rng::mix(st ^ Rng::mix(a));
    st = Rng::mix(st ^ Rng::mix(b));
    return Rng(st);
}

inline std::vector<double> rng_uniform(Rng& rng, std::int64_t n) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& v : out) v = rng.next_double();
    return out;
}

// Fisher-Yates, swapping from the back: j = uniform[0, i] for i = n-1 .. 1.
inline std::vector<std::int64_t> rng_permutation(Rng& rng, std::int64_t n) {
    std::vector<std::int64_t> p(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    for (std::int64_t i = n - 1; i > 0; --i) {
        const auto j = static_cast<std::int64_t>(rng.next_below(static_cast<std::uint32_t>(i + 1)));
        std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
    }
    return p;
}

inline std::vector<double> rng_normal(Rng& rng, std::int64_t n, double mean, double stddev) {
    std::vector<double> out(static_cast<std::size_t>(n));
    for (auto& v : out) v = rng.next_normal(mean, stddev);
    return out;
}

}  // namespace cnnf
