#ifndef MSSM_MOMENTUM_VARIANTS_HPP
#define MSSM_MOMENTUM_VARIANTS_HPP

// Momentum-augmented recurrence cores for the selective layer.
//
// Heavy-ball (real beta) and complex (beta = rho e^{i theta}):
//   v_n = beta v_{n-1} + alpha g_n
//   h_n = Abar_n h_{n-1} + v_n
// equivalently s_n = M'_n s_{n-1} + F'_n with s = [h; v],
//   M'_n = [[Abar_n, beta I], [0, beta I]],  F'_n = [alpha g_n; alpha g_n].
// The complex core reads out Re(h_n).
//
// Adam-style: three diagonal scans
//   m_n = gamma m_{n-1} + (1 - gamma) g_n^2
//   v_n = beta v_{n-1} + alpha g_n
//   h_n = Abar_n h_{n-1} + v_n / (sqrt(m_n) + eps)
// with no bias correction.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "affine_scan.hpp"
#include "numkit.hpp"
#include "selective_ssm.hpp"

namespace mssm::momentum {

using ssm::CoreGrad;
using ssm::DriveSet;
using ssm::FlopCounter;
using ssm::LayerOptions;

// ---------------------------------------------------------------------------
// Parameter types.

/// beta = sigmoid(betaRaw) in (0, 1); alpha unconstrained.
struct MomentumParams {
    double alpha{0.6};
    double betaRaw{logit(0.9)};

    static MomentumParams from(double alpha, double beta) { return {alpha, logit(beta)}; }
    [[nodiscard]] double beta() const { return sigmoid(betaRaw); }
};

struct ComplexMomentumParams {
    double rho{0.9};
    double phase{0.0};
    double alpha{0.6};

    [[nodiscard]] Complex beta() const { return Complex::polar(rho, phase); }
};

struct AdamMomentumParams {
    double alpha{0.6};
    double beta{0.9};
    double gammaVar{0.999};
    double eps{1e-8};

    void validate() const
    {
        require(alpha > 0.0, "AdamMomentumParams: alpha must be positive");
        require(beta >= 0.0 && beta < 1.0, "AdamMomentumParams: beta must lie in [0, 1)");
        require(gammaVar >= 0.0 && gammaVar < 1.0, "AdamMomentumParams: gammaVar must lie in [0, 1)");
        require(eps >= 1e-12, "AdamMomentumParams: eps must be >= 1e-12");
    }
};

// ---------------------------------------------------------------------------
// Single-step forms.

struct MomentumState {
    std::vector<double> v;
    std::vector<double> h;
};

/// v = beta vPrev + alpha g;  h = aBar * hPrev + v.
inline MomentumState momentum_step(const std::vector<double>& vPrev, const std::vector<double>& hPrev,
                                   const DiagVec& aBar, const std::vector<double>& g, double alpha, double beta)
{
    const std::size_t n = g.size();
    require(vPrev.size() == n && hPrev.size() == n && aBar.size() == n, "momentum_step: shape mismatch");
    MomentumState s{std::vector<double>(n), std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        s.v[i] = beta * vPrev[i] + alpha * g[i];
        s.h[i] = aBar[i] * hPrev[i] + s.v[i];
    }
    return s;
}

inline MomentumState momentum_step(const std::vector<double>& vPrev, const std::vector<double>& hPrev,
                                   const DiagVec& aBar, const std::vector<double>& g, const MomentumParams& mp)
{
    return momentum_step(vPrev, hPrev, aBar, g, mp.alpha, mp.beta());
}

/// Affine element for one momentum step, state order [h; v].
template <class T = double>
scan::AffineElement<T> build_affine(const DiagVec& aBar, const double* g, T beta, double alpha)
{
    const std::size_t n = aBar.size();
    scan::MomentumBlock<T> m{std::vector<T>(n), std::vector<T>(n, beta), beta};
    std::vector<T> offset(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
        m.p[i] = T(aBar[i]);
        offset[i] = T(alpha * g[i]);
        offset[n + i] = offset[i];
    }
    return {std::move(m), std::move(offset)};
}

inline scan::AffineElement<double> build_affine(const DiagVec& aBar, const std::vector<double>& g,
                                                const MomentumParams& mp)
{
    require(aBar.size() == g.size(), "build_affine: shape mismatch");
    return build_affine<double>(aBar, g.data(), mp.beta(), mp.alpha);
}

// ---------------------------------------------------------------------------
// Cores.

struct HeavyBallMomentumCore {
    MomentumParams mp;

    struct Cache {
        std::vector<double> readout;  // h, L x W
        std::vector<double> states;   // [h; v], L x 2W
    };

    static constexpr const char* name = "momentum";
    [[nodiscard]] std::vector<double> raw() const { return {mp.alpha, mp.betaRaw}; }
    void set_raw(const std::vector<double>& v)
    {
        mp.alpha = v.at(0);
        mp.betaRaw = v.at(1);
    }
    [[nodiscard]] std::vector<std::string> raw_names() const { return {"alpha", "betaRaw"}; }

    Cache forward(const DriveSet& ds, const LayerOptions& opts, FlopCounter* fc = nullptr) const
    {
        const std::size_t w = ds.width();
        const double beta = mp.beta();
        std::vector<scan::AffineElement<double>> elements;
        elements.reserve(ds.length);
        for (std::size_t n = 0; n < ds.length; ++n) {
            DiagVec aBar(ds.aBar_at(n), ds.aBar_at(n) + w);
            elements.push_back(build_affine<double>(aBar, ds.drive_at(n), beta, mp.alpha));
        }
        ssm::count(fc, ds.length * w);  // alpha * g
        auto out = scan::run_scan(elements, std::vector<double>(2 * w, 0.0), opts.path, {false, opts.workers});
        ssm::count(fc, scan::scan_flops(scan::TransitionKind::momentum_block, out, opts.path));
        Cache c{std::vector<double>(ds.length * w), std::move(out.states)};
        for (std::size_t n = 0; n < ds.length; ++n) {
            std::copy_n(c.states.begin() + static_cast<std::ptrdiff_t>(n * 2 * w), w,
                        c.readout.begin() + static_cast<std::ptrdiff_t>(n * w));
        }
        return c;
    }

    CoreGrad backward(const DriveSet& ds, const Cache& cache, const std::vector<double>& dR) const
    {
        const std::size_t w = ds.width();
        const std::size_t len = ds.length;
        const double beta = mp.beta();
        CoreGrad g{std::vector<double>(len * w), std::vector<double>(len * w), {0.0, 0.0}, std::vector<double>(len, 0.0)};
        std::vector<double> lamH(w, 0.0);
        std::vector<double> lamV(w, 0.0);  // adjoint of v_n as it enters h_n (stepwise form)
        double dAlpha = 0.0;
        double dBeta = 0.0;
        for (std::size_t n = len; n-- > 0;) {
            const double* next = n + 1 < len ? ds.aBar_at(n + 1) : nullptr;
            const double* prev = n > 0 ? cache.states.data() + (n - 1) * 2 * w : nullptr;
            const double* gn = ds.drive_at(n);
            double sq = 0.0;
            for (std::size_t i = 0; i < w; ++i) {
                lamH[i] = dR[n * w + i] + (next != nullptr ? next[i] * lamH[i] : 0.0);
                lamV[i] = lamH[i] + (n + 1 < len ? beta * lamV[i] : 0.0);
                const double hPrev = prev != nullptr ? prev[i] : 0.0;
                const double vPrev = prev != nullptr ? prev[w + i] : 0.0;
                g.dABar[n * w + i] = lamH[i] * hPrev;
                g.dDrive[n * w + i] = mp.alpha * lamV[i];
                dAlpha += lamV[i] * gn[i];
                dBeta += lamV[i] * vPrev;
                // affine-form adjoint of s_n = [h_n; v_n]: dL/dv_n = lamV - lamH
                const double av = lamV[i] - lamH[i];
                sq += lamH[i] * lamH[i] + av * av;
            }
            g.adjointSq[n] = sq;
        }
        g.dParams = {dAlpha, dBeta * beta * (1.0 - beta)};
        return g;
    }
};

struct ComplexMomentumCore {
    ComplexMomentumParams cp;

    struct Cache {
        std::vector<double> readout;   // Re(h), L x W
        std::vector<Complex> states;   // [h; v], L x 2W
    };

    static constexpr const char* name = "complex";
    [[nodiscard]] std::vector<double> raw() const { return {cp.rho, cp.phase, cp.alpha}; }
    void set_raw(const std::vector<double>& v)
    {
        cp.rho = v.at(0);
        cp.phase = v.at(1);
        cp.alpha = v.at(2);
    }
    [[nodiscard]] std::vector<std::string> raw_names() const { return {"rho", "phase", "alpha"}; }

    Cache forward(const DriveSet& ds, const LayerOptions& opts, FlopCounter* fc = nullptr) const
    {
        const std::size_t w = ds.width();
        const Complex beta = cp.beta();
        std::vector<scan::AffineElement<Complex>> elements;
        elements.reserve(ds.length);
        for (std::size_t n = 0; n < ds.length; ++n) {
            DiagVec aBar(ds.aBar_at(n), ds.aBar_at(n) + w);
            elements.push_back(build_affine<Complex>(aBar, ds.drive_at(n), beta, cp.alpha));
        }
        ssm::count(fc, ds.length * w);
        auto out = scan::run_scan(elements, std::vector<Complex>(2 * w), opts.path, {false, opts.workers});
        ssm::count(fc, scan::scan_flops(scan::TransitionKind::momentum_block, out, opts.path));
        Cache c{std::vector<double>(ds.length * w), std::move(out.states)};
        for (std::size_t n = 0; n < ds.length; ++n) {
            for (std::size_t i = 0; i < w; ++i) c.readout[n * w + i] = c.states[n * 2 * w + i].re;
        }
        return c;
    }

    CoreGrad backward(const DriveSet& ds, const Cache& cache, const std::vector<double>& dR) const
    {
        const std::size_t w = ds.width();
        const std::size_t len = ds.length;
        const Complex betaConj = cp.beta().conj();
        CoreGrad g{std::vector<double>(len * w), std::vector<double>(len * w), {}, std::vector<double>(len, 0.0)};
        // Complex adjoints use lambda = dL/dRe + i dL/dIm.
        std::vector<Complex> lamH(w);
        std::vector<Complex> lamV(w);
        double dAlpha = 0.0;
        Complex dBeta;
        for (std::size_t n = len; n-- > 0;) {
            const double* next = n + 1 < len ? ds.aBar_at(n + 1) : nullptr;
            const Complex* prev = n > 0 ? cache.states.data() + (n - 1) * 2 * w : nullptr;
            const double* gn = ds.drive_at(n);
            double sq = 0.0;
            for (std::size_t i = 0; i < w; ++i) {
                Complex lh(dR[n * w + i]);
                if (next != nullptr) lh += Complex(next[i]) * lamH[i];
                lamH[i] = lh;
                lamV[i] = n + 1 < len ? lamH[i] + betaConj * lamV[i] : lamH[i];
                const Complex hPrev = prev != nullptr ? prev[i] : Complex();
                const Complex vPrev = prev != nullptr ? prev[w + i] : Complex();
                g.dABar[n * w + i] = lamH[i].re * hPrev.re + lamH[i].im * hPrev.im;
                g.dDrive[n * w + i] = cp.alpha * lamV[i].re;
                dAlpha += lamV[i].re * gn[i];
                dBeta += lamV[i] * vPrev.conj();
                const Complex av = lamV[i] - lamH[i];
                sq += lamH[i].re * lamH[i].re + lamH[i].im * lamH[i].im + av.re * av.re + av.im * av.im;
            }
            g.adjointSq[n] = sq;
        }
        const double c = std::cos(cp.phase);
        const double s = std::sin(cp.phase);
        g.dParams = {dBeta.re * c + dBeta.im * s, cp.rho * (-dBeta.re * s + dBeta.im * c), dAlpha};
        return g;
    }
};

struct AdamMomentumCore {
    double alpha{0.6};
    double betaRaw{logit(0.9)};
    double gammaRaw{logit(0.999)};
    double eps{1e-8};

    static AdamMomentumCore from(const AdamMomentumParams& ap)
    {
        ap.validate();
        require(ap.beta > 0.0 && ap.gammaVar > 0.0,
                "AdamMomentumCore: beta and gammaVar must be > 0 for the sigmoid parameterization");
        return {ap.alpha, logit(ap.beta), logit(ap.gammaVar), ap.eps};
    }
    [[nodiscard]] AdamMomentumParams params() const { return {alpha, sigmoid(betaRaw), sigmoid(gammaRaw), eps}; }

    struct Cache {
        std::vector<double> readout;  // h, L x W
        std::vector<double> m;        // L x W
        std::vector<double> v;        // L x W
        std::vector<double> u;        // normalized drive, L x W
    };

    static constexpr const char* name = "adam";
    [[nodiscard]] std::vector<double> raw() const { return {alpha, betaRaw, gammaRaw}; }
    void set_raw(const std::vector<double>& r)
    {
        alpha = r.at(0);
        betaRaw = r.at(1);
        gammaRaw = r.at(2);
    }
    [[nodiscard]] std::vector<std::string> raw_names() const { return {"alpha", "betaRaw", "gammaRaw"}; }

    Cache forward(const DriveSet& ds, const LayerOptions& opts, FlopCounter* fc = nullptr) const
    {
        const std::size_t w = ds.width();
        const std::size_t len = ds.length;
        const double beta = sigmoid(betaRaw);
        const double gamma = sigmoid(gammaRaw);
        const scan::ScanOptions so{false, opts.workers};
        const std::vector<double> zeros(w, 0.0);

        std::vector<scan::AffineElement<double>> mEl;
        std::vector<scan::AffineElement<double>> vEl;
        mEl.reserve(len);
        vEl.reserve(len);
        for (std::size_t n = 0; n < len; ++n) {
            const double* gn = ds.drive_at(n);
            std::vector<double> mOff(w);
            std::vector<double> vOff(w);
            for (std::size_t i = 0; i < w; ++i) {
                mOff[i] = (1.0 - gamma) * gn[i] * gn[i];
                vOff[i] = alpha * gn[i];
            }
            mEl.push_back({scan::Diagonal<double>{std::vector<double>(w, gamma)}, std::move(mOff)});
            vEl.push_back({scan::Diagonal<double>{std::vector<double>(w, beta)}, std::move(vOff)});
        }
        ssm::count(fc, len * w * 4);
        auto mOut = scan::run_scan(mEl, zeros, opts.path, so);
        auto vOut = scan::run_scan(vEl, zeros, opts.path, so);
        ssm::count(fc, scan::scan_flops(scan::TransitionKind::diagonal, mOut, opts.path));
        ssm::count(fc, scan::scan_flops(scan::TransitionKind::diagonal, vOut, opts.path));

        Cache c;
        c.m = std::move(mOut.states);
        c.v = std::move(vOut.states);
        c.u.resize(len * w);
        for (std::size_t i = 0; i < len * w; ++i) c.u[i] = c.v[i] / (std::sqrt(c.m[i]) + eps);
        ssm::count(fc, len * w * 3);

        std::vector<scan::AffineElement<double>> hEl;
        hEl.reserve(len);
        for (std::size_t n = 0; n < len; ++n) {
            hEl.push_back({scan::Diagonal<double>{std::vector<double>(ds.aBar_at(n), ds.aBar_at(n) + w)},
                           std::vector<double>(c.u.begin() + static_cast<std::ptrdiff_t>(n * w),
                                               c.u.begin() + static_cast<std::ptrdiff_t>((n + 1) * w))});
        }
        auto hOut = scan::run_scan(hEl, zeros, opts.path, so);
        ssm::count(fc, scan::scan_flops(scan::TransitionKind::diagonal, hOut, opts.path));
        c.readout = std::move(hOut.states);
        return c;
    }

    CoreGrad backward(const DriveSet& ds, const Cache& cache, const std::vector<double>& dR) const
    {
        const std::size_t w = ds.width();
        const std::size_t len = ds.length;
        const double beta = sigmoid(betaRaw);
        const double gamma = sigmoid(gammaRaw);
        CoreGrad g{std::vector<double>(len * w), std::vector<double>(len * w), {}, std::vector<double>(len, 0.0)};
        std::vector<double> lamH(w, 0.0);
        std::vector<double> lamV(w, 0.0);
        std::vector<double> lamM(w, 0.0);
        double dAlpha = 0.0;
        double dBeta = 0.0;
        double dGamma = 0.0;
        for (std::size_t n = len; n-- > 0;) {
            const double* next = n + 1 < len ? ds.aBar_at(n + 1) : nullptr;
            const bool last = n + 1 == len;
            const double* gn = ds.drive_at(n);
            double sq = 0.0;
            for (std::size_t i = 0; i < w; ++i) {
                const std::size_t k = n * w + i;
                lamH[i] = dR[k] + (next != nullptr ? next[i] * lamH[i] : 0.0);
                const double du = lamH[i];
                const double root = std::sqrt(cache.m[k]);
                const double denom = root + eps;
                const double dmLocal = root > 0.0 ? -du * cache.v[k] / (denom * denom * 2.0 * root) : 0.0;
                lamV[i] = du / denom + (last ? 0.0 : beta * lamV[i]);
                lamM[i] = dmLocal + (last ? 0.0 : gamma * lamM[i]);
                const double hPrev = n > 0 ? cache.readout[k - w] : 0.0;
                const double vPrev = n > 0 ? cache.v[k - w] : 0.0;
                const double mPrev = n > 0 ? cache.m[k - w] : 0.0;
                g.dABar[k] = lamH[i] * hPrev;
                g.dDrive[k] = alpha * lamV[i] + lamM[i] * (1.0 - gamma) * 2.0 * gn[i];
                dAlpha += lamV[i] * gn[i];
                dBeta += lamV[i] * vPrev;
                dGamma += lamM[i] * (mPrev - gn[i] * gn[i]);
                sq += lamH[i] * lamH[i];
            }
            g.adjointSq[n] = sq;
        }
        g.dParams = {dAlpha, dBeta * beta * (1.0 - beta), dGamma * gamma * (1.0 - gamma)};
        return g;
    }
};

// ---------------------------------------------------------------------------
// Layer-level entry points.

template <class Core>
struct VariantForward {
    RealSeq y;
    ssm::LayerCache<Core> cache;
};

inline VariantForward<HeavyBallMomentumCore> momentum_forward(const ssm::SelectiveParams& p, const MomentumParams& mp,
                                                              const RealSeq& x, const LayerOptions& opts = {},
                                                              FlopCounter* fc = nullptr)
{
    auto r = ssm::layer_forward(p, HeavyBallMomentumCore{mp}, x, opts, fc);
    return {std::move(r.y), std::move(r.cache)};
}

inline ssm::LayerGrad momentum_backward(const ssm::SelectiveParams& p, const MomentumParams& mp,
                                        const VariantForward<HeavyBallMomentumCore>& fwd, const RealSeq& gradY)
{
    return ssm::layer_backward(p, HeavyBallMomentumCore{mp}, fwd.cache, gradY);
}

inline VariantForward<ComplexMomentumCore> complex_forward(const ssm::SelectiveParams& p,
                                                           const ComplexMomentumParams& cp, const RealSeq& x,
                                                           const LayerOptions& opts = {})
{
    auto r = ssm::layer_forward(p, ComplexMomentumCore{cp}, x, opts);
    return {std::move(r.y), std::move(r.cache)};
}

inline ssm::LayerGrad complex_backward(const ssm::SelectiveParams& p, const ComplexMomentumParams& cp,
                                       const VariantForward<ComplexMomentumCore>& fwd, const RealSeq& gradY)
{
    return ssm::layer_backward(p, ComplexMomentumCore{cp}, fwd.cache, gradY);
}

inline VariantForward<AdamMomentumCore> adam_forward(const ssm::SelectiveParams& p, const AdamMomentumParams& ap,
                                                     const RealSeq& x, const LayerOptions& opts = {})
{
    auto r = ssm::layer_forward(p, AdamMomentumCore::from(ap), x, opts);
    return {std::move(r.y), std::move(r.cache)};
}

inline ssm::LayerGrad adam_backward(const ssm::SelectiveParams& p, const AdamMomentumParams& ap,
                                    const VariantForward<AdamMomentumCore>& fwd, const RealSeq& gradY)
{
    return ssm::layer_backward(p, AdamMomentumCore::from(ap), fwd.cache, gradY);
}

// ---------------------------------------------------------------------------
// Closed forms.

/// alpha * beta^k: the momentum-state response to a unit impulse k steps back.
inline Complex impulse_response(const ComplexMomentumParams& cp, std::size_t k)
{
    const double mag = cp.alpha * std::pow(cp.rho, static_cast<double>(k));
    return Complex::polar(mag, cp.phase * static_cast<double>(k));
}

struct UpdateBounds {
    double loose;      // alpha B / eps, the bound claimed for the normalized update
    double geometric;  // alpha B / (1 - beta), bound on ||v_n||_inf
    double strict;     // alpha B / ((1 - beta) eps), holds for every input sequence
};

inline UpdateBounds normalized_update_bound(const AdamMomentumParams& ap, double inputBound)
{
    require(inputBound >= 0.0, "normalized_update_bound: B must be >= 0");
    require(ap.beta < 1.0, "normalized_update_bound: geometric bound undefined for beta = 1");
    require(ap.eps > 0.0, "normalized_update_bound: eps must be positive");
    const double geometric = ap.alpha * inputBound / (1.0 - ap.beta);
    return {ap.alpha * inputBound / ap.eps, geometric, geometric / ap.eps};
}

struct AdamSimulation {
    double supNormalized{0.0};  // max over steps and coordinates of |v/(sqrt(m)+eps)|
    double supMomentum{0.0};    // max |v|
};

/// Direct recurrence on a sequence of drives (L x W, row-major).
inline AdamSimulation simulate_adam_updates(const AdamMomentumParams& ap, const std::vector<double>& drives,
                                            std::size_t width)
{
    require(width > 0 && drives.size() % width == 0, "simulate_adam_updates: drives must be L x W");
    std::vector<double> v(width, 0.0);
    std::vector<double> m(width, 0.0);
    AdamSimulation out;
    for (std::size_t k = 0; k < drives.size(); ++k) {
        const std::size_t i = k % width;
        const double g = drives[k];
        v[i] = ap.beta * v[i] + ap.alpha * g;
        m[i] = ap.gammaVar * m[i] + (1.0 - ap.gammaVar) * g * g;
        out.supMomentum = std::max(out.supMomentum, std::abs(v[i]));
        out.supNormalized = std::max(out.supNormalized, std::abs(v[i] / (std::sqrt(m[i]) + ap.eps)));
    }
    return out;
}

}  // namespace mssm::momentum

#endif  // MSSM_MOMENTUM_VARIANTS_HPP
