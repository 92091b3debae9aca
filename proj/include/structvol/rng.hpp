#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace structvol::rng {

// Counter-based generator: every draw is a pure function of
// (seed, stream, counter), so parallel and sequential fills of the same
// index range produce identical values.

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t mix(uint64_t seed, uint64_t stream, uint64_t counter) {
    return splitmix64(splitmix64(splitmix64(seed) + stream) + counter);
}

// Derives an independent stream id, e.g. one per diffusion timestep.
inline uint64_t substream(uint64_t stream, uint64_t index) {
    return splitmix64(stream + 0x632BE59BD9B4E019ull * (index + 1));
}

// Uniform in [0, 1).
inline double uniform01(uint64_t seed, uint64_t stream, uint64_t counter) {
    return double(mix(seed, stream, counter) >> 11) * 0x1.0p-53;
}

inline double uniform_range(uint64_t seed, uint64_t stream, uint64_t counter, double lo, double hi) {
    return lo + (hi - lo) * uniform01(seed, stream, counter);
}

// Uniform index in [0, n).
inline uint64_t uniform_index(uint64_t seed, uint64_t stream, uint64_t counter, uint64_t n) {
    return uint64_t(uniform01(seed, stream, counter) * double(n)) % n;
}

// Standard normal via Box-Muller; consumes counters 2i and 2i+1 for draw i.
inline double normal(uint64_t seed, uint64_t stream, uint64_t draw) {
    double u1 = 1.0 - uniform01(seed, stream, 2 * draw);      // (0, 1], log-safe
    double u2 = uniform01(seed, stream, 2 * draw + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

inline std::vector<double> normal_field(uint64_t seed, uint64_t stream, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = normal(seed, stream, i);
    return out;
}

}  // namespace structvol::rng
