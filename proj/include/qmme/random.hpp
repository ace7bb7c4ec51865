#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <vector>

#include "qmme/error.hpp"

namespace qmme {

/// SplitMix64 finalizer, used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/**
 * Seedable, portable random source.
 *
 * The engine is std::mt19937_64, whose output sequence is fixed by the C++
 * standard. The distributions below are implemented here rather than taken
 * from <random>, because the standard library distributions are not
 * guaranteed to produce the same values across implementations.
 *
 * Streams: Rng(seed, stream) seeds the engine with
 * splitmix64(seed ^ splitmix64(stream)). Distinct stream ids give
 * statistically independent sequences for the same user seed (e.g. one
 * stream for the design matrix, one for the noise, one for the sketch).
 */
class Rng {
public:
    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
        : engine_(splitmix64(seed ^ splitmix64(stream))) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform on (0, 1).
    double uniform_open() {
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return u;
    }

    /// Unbiased integer in [0, n).
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw Error(ErrorCode::InvalidArgument, "uniform_index with n = 0");
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                    std::numeric_limits<std::uint64_t>::max() % n;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via the Marsaglia polar method.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        const double factor = std::sqrt(-2.0 * std::log(s) / s);
        spare_ = v * factor;
        has_spare_ = true;
        return u * factor;
    }

    /// Gamma(shape, 1) via Marsaglia–Tsang; shapes below one use the
    /// U^(1/shape) boost.
    double gamma(double shape) {
        if (!(shape > 0.0)) throw Error(ErrorCode::InvalidArgument, "gamma shape must be positive");
        if (shape < 1.0) {
            const double u = uniform_open();
            return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
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
            const double u = uniform_open();
            if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
            if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
        }
    }

    double chi_squared(double dof) { return 2.0 * gamma(0.5 * dof); }

    /// Student t as Z / sqrt(chi2_nu / nu).
    double student_t(double dof) {
        const double z = normal();
        return z / std::sqrt(chi_squared(dof) / dof);
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Draw a category index in [0, probs.size()) by inversion.
    template <class Probs>
    int categorical(const Probs& probs) {
        const double u = uniform();
        double acc = 0.0;
        const int k = static_cast<int>(probs.size());
        for (int j = 0; j < k; ++j) {
            acc += probs[j];
            if (u < acc) return j;
        }
        return k - 1;
    }

    /// `count` distinct draws from `pool` (partial Fisher–Yates).
    template <class T>
    std::vector<T> sample_without_replacement(std::vector<T> pool, std::size_t count) {
        if (count > pool.size()) {
            throw Error(ErrorCode::InvalidArgument, "sample size exceeds population");
        }
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(uniform_index(pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(count);
        return pool;
    }

    template <class T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(uniform_index(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace qmme
