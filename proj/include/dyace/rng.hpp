#pragma once

#include <cstdint>

namespace dyace {

/// Counter-based splittable random stream.
///
/// Each stream is identified by a 64-bit key; output i is a SplitMix64-style
/// hash of (key, i). Child streams derive a new key from (key, index) only,
/// never from the parent's draw position, so a stream's children are the same
/// no matter how much the parent has been consumed. That gives the prefix
/// property needed for reproducible rollouts: rollout j always sees the
/// stream child(j) regardless of how many rollouts run in total.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : key_(mix(seed + kGamma)), counter_(0) {}

    /// Derive an independent sub-stream. Depends only on (key, index).
    Rng child(std::uint64_t index) const {
        return Rng(mix(key_ ^ mix(index + kChildSalt)), 0);
    }

    std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

    /// Uniform double in [0, 1) with 53 random bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t next_below(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    /// Uniform integer in [lo, hi] inclusive.
    int next_int(int lo, int hi) {
        return lo + static_cast<int>(next_below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    std::uint64_t key() const { return key_; }

private:
    Rng(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

    static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kChildSalt = 0xD1B54A32D192ED03ULL;

    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ULL;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBULL;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace dyace
