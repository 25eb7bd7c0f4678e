#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Shared deterministic primitives: hashing, seeding, and RNG transforms.
// std::mt19937_64 is bit-exact across implementations; the distribution
// adapters in <random> are not, so we roll our own transforms here.

namespace epi {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = kFnvOffset) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset) {
    return fnv1a64(s.data(), s.size(), h);
}

// Stage seeds derive from (global seed, stage name) so adding a stage never
// perturbs another stage's stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
    std::uint64_t h = fnv1a64(&seed, sizeof(seed));
    return fnv1a64(tag, h);
}

std::uint32_t crc32(const void* data, std::size_t n, std::uint32_t seed = 0);

std::string to_hex(std::uint64_t v);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // 53-bit mantissa uniform in [0, 1).
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Unbiased integer in [0, n) by rejection.
    std::uint64_t uniform_int(std::uint64_t n) {
        const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    // Marsaglia polar method; the paired variate is discarded to keep the
    // call sequence trivially reproducible.
    double normal() {
        for (;;) {
            const double u = 2.0 * uniform01() - 1.0;
            const double v = 2.0 * uniform01() - 1.0;
            const double s = u * u + v * v;
            if (s > 0.0 && s < 1.0) {
                return u * std::sqrt(-2.0 * std::log(s) / s);
            }
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[uniform_int(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace epi
