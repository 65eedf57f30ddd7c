#ifndef MSSM_NUMKIT_HPP
#define MSSM_NUMKIT_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mssm {

/// Raised when a caller violates a documented precondition (shape, range).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require(bool cond, const std::string& what)
{
    if (!cond) {
        throw ContractError(what);
    }
}

// ---------------------------------------------------------------------------
// Complex values as explicit (re, im) pairs.

struct Complex {
    double re{0.0};
    double im{0.0};

    constexpr Complex() = default;
    constexpr Complex(double r) : re(r) {}  // NOLINT(google-explicit-constructor)
    constexpr Complex(double r, double i) : re(r), im(i) {}

    static Complex polar(double rho, double theta) { return {rho * std::cos(theta), rho * std::sin(theta)}; }

    [[nodiscard]] double magnitude() const { return std::hypot(re, im); }
    [[nodiscard]] constexpr Complex conj() const { return {re, -im}; }

    constexpr Complex& operator+=(const Complex& o)
    {
        re += o.re;
        im += o.im;
        return *this;
    }
    constexpr Complex& operator-=(const Complex& o)
    {
        re -= o.re;
        im -= o.im;
        return *this;
    }
    friend constexpr bool operator==(const Complex&, const Complex&) = default;
};

constexpr Complex complex_mul(const Complex& a, const Complex& b)
{
    return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re};
}

constexpr Complex operator+(Complex a, const Complex& b) { return a += b; }
constexpr Complex operator-(Complex a, const Complex& b) { return a -= b; }
constexpr Complex operator-(const Complex& a) { return {-a.re, -a.im}; }
constexpr Complex operator*(const Complex& a, const Complex& b) { return complex_mul(a, b); }

inline double magnitude(double x) { return std::abs(x); }
inline double magnitude(const Complex& z) { return z.magnitude(); }
inline double real_part(double x) { return x; }
inline double real_part(const Complex& z) { return z.re; }
inline bool is_finite(double x) { return std::isfinite(x); }
inline bool is_finite(const Complex& z) { return std::isfinite(z.re) && std::isfinite(z.im); }

template <class T>
constexpr T zero_of() { return T(0.0); }
template <class T>
constexpr T one_of() { return T(1.0); }

// ---------------------------------------------------------------------------
// Scalar functions.

/// log(1 + e^x), overflow-safe for large |x|.
inline double softplus(double x)
{
    if (x > 30.0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

inline double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Inverse of softplus for y > 0.
inline double softplus_inverse(double y)
{
    if (y > 30.0) {
        return y + std::log(-std::expm1(-y));
    }
    return std::log(std::expm1(y));
}

// ---------------------------------------------------------------------------
// Diagonal matrices stored by their values.

template <class T>
using DiagVecOf = std::vector<T>;
using DiagVec = DiagVecOf<double>;

/// values[i] = exp(scale * d[i]).
inline DiagVec elementwise_exp(const DiagVec& d, double scale)
{
    DiagVec out(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        out[i] = std::exp(scale * d[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dense row-major matrix; RealSeq is the time-major L x D view of a sequence.

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data))
    {
        require(data_.size() == rows_ * cols_, "Matrix: data size does not match shape");
    }

    [[nodiscard]] std::size_t rows() const { return rows_; }
    [[nodiscard]] std::size_t cols() const { return cols_; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    double* row(std::size_t r) { return data_.data() + r * cols_; }
    [[nodiscard]] const double* row(std::size_t r) const { return data_.data() + r * cols_; }

    std::vector<double>& data() { return data_; }
    [[nodiscard]] const std::vector<double>& data() const { return data_; }

    [[nodiscard]] bool all_finite() const
    {
        for (double v : data_) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
        return true;
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_{0};
    std::size_t cols_{0};
    std::vector<double> data_;
};

using RealSeq = Matrix;

inline void require_sequence(const RealSeq& x, const std::string& who)
{
    require(x.rows() >= 1 && x.cols() >= 1, who + ": sequence must have L >= 1 and D >= 1");
    require(x.all_finite(), who + ": sequence contains non-finite values");
}

// ---------------------------------------------------------------------------
// Counter-based deterministic RNG (SplitMix64 finalizer over seed + counter).

class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

    [[nodiscard]] std::uint64_t seed() const { return seed_; }
    [[nodiscard]] std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64()
    {
        ++counter_;
        std::uint64_t z = seed_ + counter_ * 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one draw per call, no cached spare).
    double normal()
    {
        double u1 = uniform();
        while (u1 <= 0.0) {
            u1 = uniform();
        }
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    std::size_t below(std::size_t n)
    {
        require(n > 0, "Rng::below: n must be positive");
        return static_cast<std::size_t>(next_u64() % n);
    }

    /// Independent child stream; derived deterministically from this stream.
    Rng split() { return Rng(next_u64()); }

    template <class V>
    void shuffle(V& v)
    {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[below(i)]);
        }
    }

private:
    std::uint64_t seed_;
    std::uint64_t counter_{0};
};

/// Shortest decimal text that round-trips to x.
inline std::string shortest(double x)
{
    char buf[32];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, r.ptr};
}

// ---------------------------------------------------------------------------
// Error measures used by tests and checks.

/// |a - b| measured against max(rel * |b|, floor).
inline bool close_rel(double a, double b, double rel, double absFloor)
{
    return std::abs(a - b) <= std::max(rel * std::abs(b), absFloor);
}

inline double rel_error(double a, double b, double absFloor = 0.0)
{
    const double denom = std::max({std::abs(a), std::abs(b), absFloor});
    return denom == 0.0 ? 0.0 : std::abs(a - b) / denom;
}

}  // namespace mssm

#endif  // MSSM_NUMKIT_HPP
