#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <utility>
#include <vector>

namespace fraudstream {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derives an independent child seed from a parent seed and a stream tag.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
    return splitmix64(splitmix64(seed) ^ (tag + 0x632BE59BD9B4E019ULL));
}

// Thin wrapper over mt19937_64. The sampling helpers are written out here
// instead of using <random> distributions, whose output is implementation
// defined, so a seed replays identically under any standard library.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Unbiased integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = (0 - n) % n;
        std::uint64_t x = engine_();
        while (x < limit) x = engine_();
        return x % n;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * std::numbers::pi * u2;
        spare_ = radius * std::sin(angle);
        has_spare_ = true;
        return radius * std::cos(angle);
    }

    double normal(double mean, double sd) { return mean + sd * normal(); }

    /// Knuth's multiplication method; a rounded normal approximation above 30.
    std::int64_t poisson(double lambda) {
        if (lambda <= 0.0) return 0;
        if (lambda > 30.0) {
            const auto v = std::llround(normal(lambda, std::sqrt(lambda)));
            return v < 0 ? 0 : v;
        }
        const double limit = std::exp(-lambda);
        std::int64_t k = 0;
        double p = uniform();
        while (p > limit) {
            ++k;
            p *= uniform();
        }
        return k;
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Draws m distinct elements from `pool` (partial Fisher-Yates on a copy).
    template <typename T>
    std::vector<T> sample_without_replacement(std::span<const T> pool, std::size_t m) {
        std::vector<T> items(pool.begin(), pool.end());
        if (m > items.size()) m = items.size();
        for (std::size_t i = 0; i < m; ++i) {
            const auto j = i + static_cast<std::size_t>(below(items.size() - i));
            std::swap(items[i], items[j]);
        }
        items.resize(m);
        return items;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace fraudstream
