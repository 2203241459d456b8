#pragma once

#include <cstdint>

namespace salbench {

// PCG32 (XSH-RR variant, 64-bit state / 32-bit output).
// Fixed multiplier and stream constants so a given seed produces the same
// draw sequence on every platform; this is what makes weight init and the
// synthetic corpus bit-reproducible.
class Pcg32 {
public:
    static constexpr std::uint64_t kMultiplier = 6364136223846793005ULL;
    static constexpr std::uint64_t kDefaultStream = 1442695040888963407ULL;

    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = kDefaultStream) {
        inc_ = (stream << 1u) | 1u;
        state_ = 0u;
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * kMultiplier + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31u));
    }

    // Uniform double in [0, 1), 32 bits of resolution.
    double uniform01() {
        return static_cast<double>(next_u32()) * (1.0 / 4294967296.0);
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    // Uniform integer in [0, bound).
    std::uint32_t bounded(std::uint32_t bound) {
        // Debiased modulo rejection (classic PCG bounded-rand).
        std::uint32_t threshold = (-bound) % bound;
        for (;;) {
            std::uint32_t r = next_u32();
            if (r >= threshold) {
                return r % bound;
            }
        }
    }

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
};

}  // namespace salbench
