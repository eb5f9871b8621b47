#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace stroke {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

/// Deterministic counter-based RNG. All random draws in the project go through
/// this class so results are reproducible across platforms and standard-library
/// versions (std::uniform_*_distribution is implementation-defined).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(splitmix64(seed ^ 0x5dee3b9c2c7ull)) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n), n > 0.
    int64_t uniform_int(int64_t n) { return static_cast<int64_t>(next_u64() % static_cast<uint64_t>(n)); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    /// Normal truncated to +/- 2 sigma (resampled), the init used for projections.
    double trunc_normal(double sigma) {
        for (;;) {
            double v = normal();
            if (v >= -2.0 && v <= 2.0) return v * sigma;
        }
    }

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            int64_t j = uniform_int(i + 1);
            std::swap(v[i], v[static_cast<size_t>(j)]);
        }
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Stage/record seed fan-out: hash a parent seed with a stream of tags.
/// Documented contract: derive(seed, tag) = splitmix64(seed ^ fnv1a(tag)),
/// derive(seed, a, b, ...) folds left.
inline uint64_t fnv1a(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t derive_seed(uint64_t seed, std::string_view tag) {
    return splitmix64(seed ^ fnv1a(tag));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t index) {
    return splitmix64(seed ^ (0x9e3779b97f4a7c15ull + index));
}

inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b) {
    return derive_seed(derive_seed(seed, a), b);
}

}  // namespace stroke
