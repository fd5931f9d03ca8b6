#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace caqa {

/// Seeded random stream. All distribution draws are implemented on top of the
/// raw 64-bit engine output so that sequences are identical across standard
/// library implementations and the full stream state round-trips through
/// save/restore as a single string.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    /// Gaussian draw via Box-Muller. No cached spare value, so each draw
    /// consumes exactly two engine outputs and the stream state stays
    /// checkpoint-friendly.
    double normal(double mean, double stddev) {
        double u1 = 1.0 - uniform01();  // (0, 1]
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    }

    /// Unbiased integer in [0, n).
    std::size_t below(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::below: n must be positive");
        const std::uint64_t span = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        std::uint64_t r;
        do {
            r = engine_();
        } while (r >= limit);
        return static_cast<std::size_t>(r % span);
    }

    /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        if (k > n)
            throw std::invalid_argument("Rng::sample_without_replacement: k=" +
                                        std::to_string(k) + " > n=" + std::to_string(n));
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + below(n - i)]);
        idx.resize(k);
        return idx;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    std::string state() const {
        std::ostringstream os;
        os << engine_;
        return os.str();
    }
    void restore(const std::string& s) {
        std::istringstream is(s);
        is >> engine_;
        if (!is) throw std::runtime_error("Rng::restore: malformed engine state");
    }

    /// splitmix64-style combiner for deriving child seeds.
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace caqa
