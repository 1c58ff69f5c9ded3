#pragma once

#include <cstdint>
#include <string_view>

namespace msmbd {

/// PCG-XSH-RR 32-bit output generator with a 64-bit state.
///
/// Used for every random draw in the library (parameter init, synthetic
/// data, shuffling). The standard <random> distributions are not
/// specified bit-for-bit across library implementations, so sampling
/// helpers are written out here as well.
class Pcg32 {
public:
    explicit Pcg32(std::uint64_t seed, std::uint64_t stream = 0x5851f42d4c957f2dULL);

    std::uint32_t next_u32();
    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 bits of resolution.
    double uniform();
    double uniform(double lo, double hi);
    /// Unbiased integer in [0, bound).
    std::uint32_t below(std::uint32_t bound);
    /// Standard normal via Box-Muller (no cached second value).
    double normal();

private:
    std::uint64_t state_ = 0;
    std::uint64_t inc_ = 0;
};

/// 64-bit FNV-1a, used to derive per-name and per-id seeds.
std::uint64_t fnv1a64(std::string_view text);

/// SplitMix64 finalizer; mixes two seeds into one.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

} // namespace msmbd
