#pragma once

#include <cmath>
#include <cstdint>

#include "srkd/error.hpp"

namespace srkd {

// Portable seedable generator used everywhere randomness is needed.
//
// The sequence is pinned so results reproduce across platforms:
//   state_{k+1} = state_k + 0x9E3779B97F4A7C15            (splitmix64)
//   output_k    = mix64(state_{k+1})
// next_double() takes the top 53 bits of next_u64() -> [0, 1).
// next_below(n) uses rejection sampling on next_u64() (unbiased).
// next_normal() is Box-Muller on two fresh doubles, cosine branch only.
//
// Independent substreams are derived by hashing a seed with up to three
// stream tags (derive_seed), so per-(epoch, user) masking streams and the
// like never overlap by construction.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    static uint64_t mix64(uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }

    static uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0,
                                uint64_t c = 0) {
        uint64_t h = mix64(seed + 0x9E3779B97F4A7C15ULL);
        h = mix64(h ^ a);
        h = mix64(h ^ b);
        h = mix64(h ^ c);
        return h;
    }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix64(state_);
    }

    double next_double() {  // [0, 1)
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    uint64_t next_below(uint64_t n) {
        if (n == 0) throw ContractError("next_below: n must be positive");
        uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    double next_normal() {
        double u1 = 1.0 - next_double();  // (0, 1]
        double u2 = next_double();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    // Normal(0, sigma) with draws outside 2 sigma rejected (BERT-style init).
    double next_trunc_normal(double sigma) {
        double z;
        do {
            z = next_normal();
        } while (z < -2.0 || z > 2.0);
        return z * sigma;
    }

private:
    uint64_t state_;
};

// Fixed tags naming the independent random streams of a run.
namespace rng_stream {
constexpr uint64_t token_map = 1;
constexpr uint64_t model_init = 2;
constexpr uint64_t masking = 3;
constexpr uint64_t shuffle = 4;
constexpr uint64_t dropout = 5;
constexpr uint64_t synthetic = 6;
}  // namespace rng_stream

}  // namespace srkd
