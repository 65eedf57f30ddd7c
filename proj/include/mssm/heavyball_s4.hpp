#ifndef MSSM_HEAVYBALL_S4_HPP
#define MSSM_HEAVYBALL_S4_HPP

// Heavy-ball S4: h'' + gamma h' = -A h + B x + b, y = C h + D x, with diagonal A.
//
// Backward Euler on the first-order form (z = h') gives M s_n = s_{n-1} + F_n
// for s = [z; h], per channel
//   M = [[1 + gamma*dt, dt*a], [-dt, 1]],   F_n = [dt*(B x_n + b); 0].
// With S = 1 / (1 + gamma*dt + dt^2*a) the exact inverse is
//   M^-1 = S * [[1, -dt*a], [dt, 1 + gamma*dt]].
// Note the lower-left entry is +dt*S. The -dt*S variant that sometimes gets
// written down does not satisfy M M^-1 = I; block construction verifies the
// identity and rejects it.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "affine_scan.hpp"
#include "numkit.hpp"

namespace mssm::heavyball {

class SingularDiscretization : public std::runtime_error {
public:
    SingularDiscretization(std::size_t step, std::size_t channel, const std::string& msg)
        : std::runtime_error(msg), step_(step), channel_(channel)
    {
    }
    [[nodiscard]] std::size_t step() const { return step_; }
    [[nodiscard]] std::size_t channel() const { return channel_; }

private:
    std::size_t step_;
    std::size_t channel_;
};

inline constexpr double kMinStep = 1e-12;
inline constexpr double kSingularTol = 1e-14;
inline constexpr double kInverseTol = 1e-12;

struct HeavyBallParams {
    double gamma{1.0};
    DiagVec aDiag;
    std::vector<double> B;  // N x 1
    std::vector<double> C;  // 1 x N
    double D{0.0};
    std::vector<double> bias;  // length N, empty means zero

    [[nodiscard]] std::size_t state_size() const { return aDiag.size(); }

    void validate() const
    {
        const std::size_t n = aDiag.size();
        require(n >= 1, "HeavyBallParams: N must be >= 1");
        require(gamma > 0.0 && std::isfinite(gamma), "HeavyBallParams: gamma must be positive and finite");
        require(B.size() == n && C.size() == n, "HeavyBallParams: B and C must have length N");
        require(bias.empty() || bias.size() == n, "HeavyBallParams: bias must be empty or length N");
        for (std::size_t i = 0; i < n; ++i) {
            require(std::isfinite(aDiag[i]) && std::isfinite(B[i]) && std::isfinite(C[i]),
                    "HeavyBallParams: non-finite entry");
        }
        require(std::isfinite(D), "HeavyBallParams: non-finite D");
    }
};

enum class LowerLeftSign { derived, flipped };

using Block2d = scan::Block2<double>;

inline Block2d step_matrix(double gamma, double dt, double a) { return {1.0 + gamma * dt, dt * a, -dt, 1.0}; }

/// Schur-complement inverse of the per-channel step matrix.
/// `flipped` reproduces the sign error (-dt*S in the lower-left) for mutation tests.
inline Block2d schur_inverse(double gamma, double dt, double a, LowerLeftSign sign = LowerLeftSign::derived)
{
    const double s = 1.0 / (1.0 + gamma * dt + dt * dt * a);
    const double lowerLeft = sign == LowerLeftSign::derived ? dt * s : -dt * s;
    return {s, -dt * a * s, lowerLeft, (1.0 + gamma * dt) * s};
}

inline Block2d multiply(const Block2d& x, const Block2d& y)
{
    return {x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d, x.c * y.a + x.d * y.c, x.c * y.b + x.d * y.d};
}

/// max_ij |(M * Minv - I)_ij|
inline double inverse_residual(const Block2d& m, const Block2d& minv)
{
    const Block2d p = multiply(m, minv);
    return std::max({std::abs(p.a - 1.0), std::abs(p.b), std::abs(p.c), std::abs(p.d - 1.0)});
}

struct DiscretizedHeavyBall {
    scan::HeavyBallBlock<double> minv;
    DiagVec schur;
    double delta{0.0};
};

namespace detail {

inline void check_step(double gamma, double dt, const DiagVec& a, std::size_t step)
{
    if (!(dt >= kMinStep) || !std::isfinite(dt)) {
        throw ContractError("heavy-ball discretization: step size must be >= 1e-12 (step " + std::to_string(step) + ")");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double det = 1.0 + gamma * dt + dt * dt * a[i];
        if (std::abs(det) <= kSingularTol) {
            throw SingularDiscretization(step, i,
                                         "singular heavy-ball discretization at step " + std::to_string(step) +
                                             ", channel " + std::to_string(i));
        }
    }
}

inline DiscretizedHeavyBall build(double gamma, double dt, const DiagVec& a, std::size_t step, LowerLeftSign sign)
{
    check_step(gamma, dt, a, step);
    DiscretizedHeavyBall out;
    out.delta = dt;
    out.schur.resize(a.size());
    out.minv.blocks.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.schur[i] = 1.0 / (1.0 + gamma * dt + dt * dt * a[i]);
        out.minv.blocks[i] = schur_inverse(gamma, dt, a[i], sign);
        const double res = inverse_residual(step_matrix(gamma, dt, a[i]), out.minv.blocks[i]);
        if (!(res <= kInverseTol)) {
            throw std::logic_error("heavy-ball inverse check failed at step " + std::to_string(step) + ", channel " +
                                   std::to_string(i) + ": |M*Minv - I| = " + std::to_string(res));
        }
    }
    return out;
}

}  // namespace detail

inline DiscretizedHeavyBall discretize_implicit(const HeavyBallParams& p, double delta)
{
    p.validate();
    return detail::build(p.gamma, delta, p.aDiag, 0, LowerLeftSign::derived);
}

/// Per-step element (Minv, Minv F_n) in state order [z; h].
inline scan::AffineElement<double> make_step(const scan::HeavyBallBlock<double>& minv, double dt,
                                              const std::vector<double>& B, const std::vector<double>& bias, double x)
{
    const std::size_t n = minv.blocks.size();
    std::vector<double> offset(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        const double drive = dt * (B[i] * x + (bias.empty() ? 0.0 : bias[i]));
        offset[i] = minv.blocks[i].a * drive;
        offset[n + i] = minv.blocks[i].c * drive;
    }
    return {minv, std::move(offset)};
}

using scan::ScanPath;

struct HeavyBallTrajectory {
    RealSeq y;                       // L x 1
    scan::ScanOutput<double> states;  // L x 2N, [z; h]
};

inline HeavyBallTrajectory hb_forward_states(const HeavyBallParams& p, const DiscretizedHeavyBall& d, const RealSeq& x,
                                             ScanPath path = ScanPath::parallel)
{
    p.validate();
    require_sequence(x, "hb_forward");
    require(x.cols() == 1, "hb_forward: input must be single-channel");
    require(d.minv.blocks.size() == p.state_size(), "hb_forward: discretization does not match params");
    const std::size_t len = x.rows();
    const std::size_t n = p.state_size();

    std::vector<scan::AffineElement<double>> elements;
    elements.reserve(len);
    for (std::size_t t = 0; t < len; ++t) elements.push_back(make_step(d.minv, d.delta, p.B, p.bias, x(t, 0)));
    const std::vector<double> s0(2 * n, 0.0);
    HeavyBallTrajectory out{RealSeq(len, 1),
                            scan::run_scan(elements, s0, path)};
    for (std::size_t t = 0; t < len; ++t) {
        const double* s = out.states.state(t);
        double acc = p.D * x(t, 0);
        for (std::size_t i = 0; i < n; ++i) acc += p.C[i] * s[n + i];
        out.y(t, 0) = acc;
    }
    return out;
}

inline RealSeq hb_forward(const HeavyBallParams& p, const DiscretizedHeavyBall& d, const RealSeq& x,
                          ScanPath path = ScanPath::parallel)
{
    return hb_forward_states(p, d, x, path).y;
}

/// Per-channel spectral radius of Minv, from the roots of
/// lambda^2 - (2 + gamma*dt) lambda + (1 + gamma*dt + dt^2 a) = 0 (the eigenvalues of M).
inline std::vector<double> spectral_radius(const HeavyBallParams& p, double delta)
{
    p.validate();
    detail::check_step(p.gamma, delta, p.aDiag, 0);
    std::vector<double> out(p.state_size());
    const double tr = 2.0 + p.gamma * delta;
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double det = 1.0 + p.gamma * delta + delta * delta * p.aDiag[i];
        // tr^2 - 4 det, expanded to avoid cancellation when the roots nearly coincide.
        const double disc = delta * delta * (p.gamma * p.gamma - 4.0 * p.aDiag[i]);
        double minMag = 0.0;
        if (disc >= 0.0) {
            // Stable root pair: big = (tr + sign(tr) sqrt(disc)) / 2, small = det / big.
            const double big = 0.5 * (tr + std::copysign(std::sqrt(disc), tr));
            const double small = det / big;
            minMag = std::min(std::abs(big), std::abs(small));
        } else {
            minMag = std::sqrt(det);  // complex pair, |lambda|^2 = det
        }
        out[i] = 1.0 / minMag;
    }
    return out;
}

/// Time-varying parameters: per-step dt_n, A_n (diagonal) and B_n.
struct TimeVaryingInputs {
    std::vector<double> deltas;
    std::vector<DiagVec> aSeq;
    std::vector<std::vector<double>> bSeq;
};

inline RealSeq hb_forward_timevarying(const HeavyBallParams& p, const TimeVaryingInputs& tv, const RealSeq& x,
                                      ScanPath path = ScanPath::parallel)
{
    require(p.gamma > 0.0, "hb_forward_timevarying: gamma must be positive");
    require_sequence(x, "hb_forward_timevarying");
    require(x.cols() == 1, "hb_forward_timevarying: input must be single-channel");
    const std::size_t len = x.rows();
    const std::size_t n = p.C.size();
    require(tv.deltas.size() == len && tv.aSeq.size() == len && tv.bSeq.size() == len,
            "hb_forward_timevarying: per-step sequences must have length L");
    std::vector<scan::AffineElement<double>> elements;
    elements.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
        require(tv.aSeq[t].size() == n && tv.bSeq[t].size() == n, "hb_forward_timevarying: per-step width mismatch");
        const DiscretizedHeavyBall d = detail::build(p.gamma, tv.deltas[t], tv.aSeq[t], t, LowerLeftSign::derived);
        elements.push_back(make_step(d.minv, d.delta, tv.bSeq[t], p.bias, x(t, 0)));
    }
    const std::vector<double> s0(2 * n, 0.0);
    const auto states = scan::run_scan(elements, s0, path);
    RealSeq y(len, 1);
    for (std::size_t t = 0; t < len; ++t) {
        const double* s = states.state(t);
        double acc = p.D * x(t, 0);
        for (std::size_t i = 0; i < n; ++i) acc += p.C[i] * s[n + i];
        y(t, 0) = acc;
    }
    return y;
}

/// Per-channel oscillator energy z_i^2 + a_i h_i^2 of a [z; h] state; backward
/// Euler never increases it when a >= 0 and the input is zero.
inline double oscillator_energy(const DiagVec& a, const double* s)
{
    const std::size_t n = a.size();
    double e = 0.0;
    for (std::size_t i = 0; i < n; ++i) e += s[i] * s[i] + a[i] * s[n + i] * s[n + i];
    return e;
}

}  // namespace mssm::heavyball

#endif  // MSSM_HEAVYBALL_S4_HPP
