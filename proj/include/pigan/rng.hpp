#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>

namespace pigan {

/// SplitMix64 finalizer; a bijection on 64-bit words, used to derive seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seedable generator whose whole state round-trips through `state()`.
///
/// Distributions are computed here rather than through <random> adaptors so
/// sequences are identical across standard libraries and carry no hidden
/// cached values.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Standard normal by Box-Muller; consumes exactly two words per call.
    double normal();
    /// Uniform integer in [0, n).
    std::size_t below(std::size_t n);

    template <typename It>
    void shuffle(It first, It last)
    {
        const auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[below(i)]);
    }

    std::string state() const;
    void set_state(const std::string& text);

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace pigan
