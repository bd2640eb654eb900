#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace oodperm {

/// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
///
/// Every output block is a pure function of (key, counter), so a stream keyed by
/// (seed, stream index) reproduces the same numbers no matter which thread draws
/// them or in which order streams are visited.
class Philox4x32 {
public:
    using Counter = std::array<std::uint32_t, 4>;
    using Key = std::array<std::uint32_t, 2>;

    static Counter block(Counter ctr, Key key);
};

/// Sequential draws from one Philox stream. The 64-bit `stream` occupies the
/// upper counter words; the lower words count blocks within the stream.
class PhiloxStream {
public:
    PhiloxStream(std::uint64_t seed, std::uint64_t stream);

    std::uint32_t next_u32();
    std::uint64_t next_u64();
    /// Uniform integer in [0, bound), bound > 0. Lemire's multiply-shift with rejection.
    std::uint64_t uniform_below(std::uint64_t bound);
    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01();
    /// Standard normal via Box-Muller.
    double normal();

private:
    void refill();

    Philox4x32::Key key_{};
    std::uint64_t stream_ = 0;
    std::uint64_t block_index_ = 0;
    Philox4x32::Counter buffer_{};
    int used_ = 4;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

/// In-place Fisher-Yates shuffle driven by a Philox stream.
template <typename T>
void shuffle(std::span<T> values, PhiloxStream& rng) {
    for (std::size_t i = values.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.uniform_below(i));
        std::swap(values[i - 1], values[j]);
    }
}

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Seed derived from a master seed and a string tag.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

}  // namespace oodperm
