#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "lss/errors.hpp"

namespace lss {

// Counter-based generator (Philox4x32-10, Salmon et al. constants). Output
// word i is a pure function of (key, i), so the entire generator state is
// the 128-bit draw counter plus the 128-bit expanded key: 256 bits, trivially
// serializable and platform-independent.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) {
        // Expand the seed into two independent key words via splitmix64.
        std::uint64_t s = seed;
        key0_ = splitmix64(s);
        key1_ = splitmix64(s);
    }

    // Independent stream derived from this generator's key and a tag.
    // Does not consume draws from the parent.
    Rng derive(std::uint64_t tag) const {
        Rng child(0);
        std::uint64_t s = key0_ ^ (0x9E3779B97F4A7C15ull * (tag + 1));
        child.key0_ = splitmix64(s);
        s ^= key1_;
        child.key1_ = splitmix64(s);
        child.counter_lo_ = 0;
        child.counter_hi_ = 0;
        return child;
    }

    std::uint32_t next_u32() {
        std::uint64_t block_index = counter_lo_ >> 2;
        std::uint32_t lane = static_cast<std::uint32_t>(counter_lo_ & 3u);
        if (++counter_lo_ == 0) ++counter_hi_;
        return philox_block(block_index, counter_hi_)[lane];
    }

    std::uint64_t next_u64() {
        std::uint64_t lo = next_u32();
        std::uint64_t hi = next_u32();
        return (hi << 32) | lo;
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller (cosine branch). Consumes exactly two
    // uniforms per call so the draw counter alone captures generator state.
    double normal() {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Uniform integer in [0, n) by rejection (unbiased).
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n == 0) throw invalid_argument_error("rng: uniform_int(0)");
        std::uint64_t threshold = (0ull - n) % n;  // 2^64 mod n
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // 256-bit state snapshot: {counter_lo, counter_hi, key0, key1}.
    std::array<std::uint64_t, 4> state() const { return {counter_lo_, counter_hi_, key0_, key1_}; }

    void set_state(const std::array<std::uint64_t, 4>& s) {
        counter_lo_ = s[0];
        counter_hi_ = s[1];
        key0_ = s[2];
        key1_ = s[3];
    }

  private:
    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    static void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) {
        std::uint64_t p = static_cast<std::uint64_t>(a) * b;
        hi = static_cast<std::uint32_t>(p >> 32);
        lo = static_cast<std::uint32_t>(p);
    }

    std::array<std::uint32_t, 4> philox_block(std::uint64_t block_lo, std::uint64_t block_hi) const {
        std::array<std::uint32_t, 4> ctr = {
            static_cast<std::uint32_t>(block_lo), static_cast<std::uint32_t>(block_lo >> 32),
            static_cast<std::uint32_t>(block_hi), static_cast<std::uint32_t>(block_hi >> 32)};
        std::uint32_t k0 = static_cast<std::uint32_t>(key0_);
        std::uint32_t k1 = static_cast<std::uint32_t>(key0_ >> 32);
        // key1_ participates through the initial counter so the full 128-bit
        // key material affects the stream.
        ctr[2] ^= static_cast<std::uint32_t>(key1_);
        ctr[3] ^= static_cast<std::uint32_t>(key1_ >> 32);
        for (int round = 0; round < 10; ++round) {
            std::uint32_t hi0, lo0, hi1, lo1;
            mulhilo(0xD2511F53u, ctr[0], hi0, lo0);
            mulhilo(0xCD9E8D57u, ctr[2], hi1, lo1);
            std::array<std::uint32_t, 4> next = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
            ctr = next;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        return ctr;
    }

    std::uint64_t counter_lo_ = 0;
    std::uint64_t counter_hi_ = 0;
    std::uint64_t key0_ = 0;
    std::uint64_t key1_ = 0;
};

}  // namespace lss
