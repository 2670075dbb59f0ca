#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string_view>
#include <vector>

namespace hurpipe {

// All randomness in the library flows through the helpers below so that
// every result is a pure function of explicit 64-bit seeds, independent of
// platform, standard library, thread count, and evaluation order.

constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t hash_bytes(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull; // FNV-1a 64
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Folds an arbitrary list of keys into one stream seed.
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = 0x9e3779b97f4a7c15ull;
    for (std::uint64_t k : keys) h = mix64(h ^ mix64(k));
    return h;
}

// Counter-based uniform in [0, 1): usable from any thread at any time.
inline double unit_at(std::initializer_list<std::uint64_t> keys) {
    return double(derive_seed(keys) >> 11) * 0x1.0p-53;
}

// Counter-based standard normal (Box-Muller on two derived uniforms).
inline double normal_at(std::initializer_list<std::uint64_t> keys) {
    std::uint64_t h = derive_seed(keys);
    double u1 = (double(mix64(h ^ 0x5bf0f0a3ull) >> 11) + 0.5) * 0x1.0p-53;
    double u2 = double(mix64(h ^ 0xa2c17b9bull) >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// Sequential splitmix64 stream for shuffles and sampling loops.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double unit() { return double(next() >> 11) * 0x1.0p-53; }

    // Uniform in (0, 1); safe to pass to log().
    double unit_open() { return (double(next() >> 11) + 0.5) * 0x1.0p-53; }

    double normal() {
        double u1 = unit_open();
        double u2 = unit();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

    // Unbiased uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = (~0ull / n) * n;
        std::uint64_t r;
        do {
            r = next();
        } while (r >= limit);
        return r % n;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = std::size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
};

} // namespace hurpipe
