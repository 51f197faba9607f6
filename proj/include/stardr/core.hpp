#pragma once

// Shared vocabulary for the stardr library: error types, matrix aliases and
// the deterministic random number generator used by every stochastic stage.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stardr {

/// Base class of every error the library raises.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: malformed files, shape mismatches, contract violations.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Failure while running a valid computation (e.g. a diverging loss).
class RuntimeFailure : public Error {
public:
    using Error::Error;
};

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

inline std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Gather rows of `src` in the order given by `rows`.
inline Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& rows) {
    Matrix out(static_cast<Index>(rows.size()), src.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.row(static_cast<Index>(i)) = src.row(static_cast<Index>(rows[i]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Random numbers
//
// xoshiro256** seeded through splitmix64. Every distribution below is written
// out explicitly so that streams are identical across standard libraries
// (std::uniform_real_distribution and friends are implementation-defined).
//
// Sub-seeds: a stage that needs an independent stream calls
// `derive_seed(parent, tag...)`, which hashes the parent seed together with
// the tags through splitmix64. The tags used by the library are listed in
// `stream` below.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

/// Mix a parent seed with any number of integer tags into a new seed.
template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t parent, Tags... tags) {
    std::uint64_t state = parent;
    std::uint64_t out = splitmix64(state);
    ((state ^= static_cast<std::uint64_t>(tags) * 0xD1B54A32D192ED03ULL, out ^= splitmix64(state)), ...);
    return out;
}

/// Stream tags for sub-seed derivation.
namespace stream {
inline constexpr std::uint64_t init = 1;
inline constexpr std::uint64_t shuffle = 2;
inline constexpr std::uint64_t sampling = 3;
inline constexpr std::uint64_t split = 4;
inline constexpr std::uint64_t synth = 5;
inline constexpr std::uint64_t fewshot = 6;
inline constexpr std::uint64_t fold = 7;
} // namespace stream

class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed = 42) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& s : s_) s = splitmix64(sm);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    std::uint64_t seed() const { return seed_; }
    const std::array<std::uint64_t, 4>& state() const { return s_; }
    void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n) by rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ValidationError("Rng::below: empty range");
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t r;
        do {
            r = (*this)();
        } while (r >= limit);
        return r % n;
    }

    /// Standard normal via the Marsaglia polar method (no cached spare, so the
    /// stream position depends only on the number of calls).
    double normal() {
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        return u * std::sqrt(-2.0 * std::log(s) / s);
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = below(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        std::iota(p.begin(), p.end(), std::size_t{0});
        shuffle(p);
        return p;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t seed_;
    std::array<std::uint64_t, 4> s_{};
};

} // namespace stardr
