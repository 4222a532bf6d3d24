#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "tagasc/errors.hpp"

namespace tagasc {

// Seeded random source with hand-rolled distributions. std::mt19937_64 is
// bit-specified by the standard; the std distributions are not, so every
// draw here goes through our own transforms to keep runs reproducible
// across compilers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // Unbiased integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ConfigError("Rng::below: n must be positive");
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v;
        do {
            v = engine_();
        } while (v >= limit);
        return v % n;
    }

    // Standard normal via the polar method; second value cached.
    double normal() {
        if (have_cached_) {
            have_cached_ = false;
            return cached_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform01() - 1.0;
            v = 2.0 * uniform01() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double m = std::sqrt(-2.0 * std::log(s) / s);
        cached_ = v * m;
        have_cached_ = true;
        return u * m;
    }

    // Marsaglia-Tsang for shape >= 1; boosted for shape < 1.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw ConfigError("Rng::gamma: shape must be positive");
        if (shape < 1.0) {
            const double g = gamma(shape + 1.0);
            double u = uniform01();
            while (u == 0.0) u = uniform01();
            return g * std::pow(u, 1.0 / shape);
        }
        const double d = shape - 1.0 / 3.0;
        const double c = 1.0 / std::sqrt(9.0 * d);
        for (;;) {
            double x, v;
            do {
                x = normal();
                v = 1.0 + c * x;
            } while (v <= 0.0);
            v = v * v * v;
            const double u = uniform01();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double beta(double a, double b) {
        const double ga = gamma(a);
        const double gb = gamma(b);
        return ga / (ga + gb);
    }

    // Fisher-Yates with our own bounded draws.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace tagasc
