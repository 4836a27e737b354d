#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace conns {

// Deterministic splitmix64 generator. Every random choice in the pipeline
// flows from one 64-bit run seed through named sub-streams, so components
// can be re-seeded independently and runs are reproducible across platforms
// (no reliance on implementation-defined std distributions).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of mantissa.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_range(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    // Uniform in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    bool next_bool(double p) { return next_double() < p; }

    // Standard normal via Box-Muller.
    double next_gauss() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Derive an independent sub-stream from (seed, stream name).
inline Rng substream(std::uint64_t seed, std::string_view name) {
    return Rng(seed ^ fnv1a64(name));
}

// Derive an independent sub-stream from (seed, stream name, index), e.g. one
// stream per study or per training step.
inline Rng substream(std::uint64_t seed, std::string_view name, std::uint64_t index) {
    Rng mix(seed ^ fnv1a64(name));
    std::uint64_t base = mix.next_u64();
    return Rng(base + 0x9e3779b97f4a7c15ULL * (index + 1));
}

}  // namespace conns
