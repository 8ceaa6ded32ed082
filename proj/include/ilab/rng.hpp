#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ilab {

// 64-bit finalizer (splitmix64). Used both as the generator step and for
// deriving independent streams from (seed, tag) pairs.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Small counter-based generator. Every consumer derives its own stream from
// (seed, tag), so results never depend on how work is partitioned across
// threads. Not cryptographic.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : seed_(seed), counter_(0) {}

    // Independent stream keyed by tag. Pure: does not advance this stream.
    Rng derive(std::uint64_t tag) const {
        return Rng(mix64(seed_ ^ mix64(tag ^ 0xd1b54a32d192ed03ULL)));
    }

    std::uint64_t next_u64() { return mix64(seed_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

    // Uniform on [0,1) with 53 random bits.
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_below(std::uint64_t n);

    double normal();

    bool bernoulli(double p) { return uniform01() < p; }

    // Index drawn proportionally to non-negative weights (normalized here).
    std::size_t categorical(std::span<const double> weights);

    // Fisher-Yates permutation of {0..n-1}.
    std::vector<std::uint32_t> permutation(std::size_t n);

  private:
    std::uint64_t seed_;
    std::uint64_t counter_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace ilab
