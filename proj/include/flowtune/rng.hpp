#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace flowtune {

/// FNV-1a 64-bit hash. Used for cache keys and landscape seeds.
std::uint64_t fnv1a64(std::string_view data);

/// Mixes two 64-bit values into one (order matters).
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);

/// Deterministic, platform-independent PRNG (xoshiro256** seeded via splitmix64).
/// std::<distribution> types are implementation-defined, so all sampling here
/// is done by hand to keep results identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double next_unit();

    /// Uniform in (0, 1), both ends excluded.
    double next_open_unit();

    /// Uniform real in [lo, hi].
    double uniform(double lo, double hi);

    /// Uniform integer in [lo, hi], inclusive, unbiased.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    /// Standard normal via Box-Muller (no cached spare, fully deterministic).
    double normal();
    double normal(double mean, double stddev);

    /// Bernoulli draw with probability p.
    bool bernoulli(double p);

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(
                uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t s_[4];
};

} // namespace flowtune
