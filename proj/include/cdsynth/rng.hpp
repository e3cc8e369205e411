#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cdsynth {

// Deterministic pseudo-random generator with a fixed, portable algorithm.
// The standard <random> distributions are implementation-defined, which would
// make frozen test values compiler-specific; this generator produces the same
// stream on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    // splitmix64 step.
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n); n must be positive. Rejection sampling keeps
    // the draw unbiased.
    std::uint64_t below(std::uint64_t n) {
        std::uint64_t threshold = (0 - n) % n; // 2^64 mod n
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller. One fresh pair per call; the spare
    // value is cached.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform01();
        } while (u1 <= 0.0);
        u2 = uniform01();
        double radius = std::sqrt(-2.0 * std::log(u1));
        double angle = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Fisher-Yates shuffle driven by this generator.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Stable 64-bit FNV-1a hash, used to derive per-item seeds from a run seed
// and an item identifier.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ull) {
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ull;
    }
    return hash;
}

// Derives an independent seed for one work item: hashes the run seed (as
// little-endian bytes) followed by the item id.
inline std::uint64_t derive_seed(std::uint64_t run_seed, std::string_view item_id) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((run_seed >> (8 * i)) & 0xff);
    std::uint64_t h = fnv1a64(std::string_view(bytes, 8));
    return fnv1a64(item_id, h);
}

} // namespace cdsynth
