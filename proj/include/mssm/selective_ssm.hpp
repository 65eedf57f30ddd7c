#ifndef MSSM_SELECTIVE_SSM_HPP
#define MSSM_SELECTIVE_SSM_HPP

// Selective (input-conditioned) diagonal SSM layer.
//
// Per step n with input x_n (D channels) and N states shared across channels:
//   B_n = wB x_n,  C_n = wC x_n,  Delta_n[d] = softplus(theta[d] + wDelta . x_n)
//   Abar_n[d,j] = exp(Delta_n[d] a[d,j]),  a = -exp(aLog) < 0
//   g_n[d,j]    = Delta_n[d] B_n[j] x_n[d]           (exact ZOH: (Abar-1)/a instead of Delta)
// A recurrence core turns (Abar, g) into readout states r_n[d,j], and
//   y_n[d] = sum_j C_n[j] r_n[d,j] + skip[d] x_n[d].
// The vanilla core is h_n = Abar_n h_{n-1} + g_n with r = h. The momentum
// cores in momentum_variants.hpp plug into the same layer code.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "affine_scan.hpp"
#include "numkit.hpp"

namespace mssm::ssm {

using scan::ScanPath;

struct FlopCounter {
    std::uint64_t flops{0};
    void add(std::uint64_t n) { flops += n; }
};

inline void count(FlopCounter* fc, std::uint64_t n)
{
    if (fc != nullptr) fc->add(n);
}

struct SelectiveParams {
    std::size_t channels{0};  // D
    std::size_t state{0};     // N
    Matrix aLog;              // D x N, a = -exp(aLog)
    Matrix wB;                // N x D
    Matrix wC;                // N x D
    std::vector<double> wDelta;      // D (Linear_1: R^D -> R)
    std::vector<double> thetaDelta;  // D
    std::vector<double> skip;        // D

    SelectiveParams() = default;
    SelectiveParams(std::size_t d, std::size_t n)
        : channels(d), state(n), aLog(d, n), wB(n, d), wC(n, d), wDelta(d, 0.0), thetaDelta(d, 0.0), skip(d, 0.0)
    {
    }

    [[nodiscard]] double a(std::size_t d, std::size_t j) const { return -std::exp(aLog(d, j)); }

    /// Visits (name, values, shape) of every learnable tensor.
    template <class Self, class F>
    static void visit(Self& self, F&& f)
    {
        f("aLog", self.aLog.data(), std::vector<std::size_t>{self.channels, self.state});
        f("wB", self.wB.data(), std::vector<std::size_t>{self.state, self.channels});
        f("wC", self.wC.data(), std::vector<std::size_t>{self.state, self.channels});
        f("wDelta", self.wDelta, std::vector<std::size_t>{self.channels});
        f("thetaDelta", self.thetaDelta, std::vector<std::size_t>{self.channels});
        f("skip", self.skip, std::vector<std::size_t>{self.channels});
    }

    void validate() const
    {
        require(channels >= 1 && state >= 1, "SelectiveParams: D and N must be positive");
        require(aLog.rows() == channels && aLog.cols() == state, "SelectiveParams: aLog must be D x N");
        require(wB.rows() == state && wB.cols() == channels, "SelectiveParams: wB must be N x D");
        require(wC.rows() == state && wC.cols() == channels, "SelectiveParams: wC must be N x D");
        require(wDelta.size() == channels && thetaDelta.size() == channels && skip.size() == channels,
                "SelectiveParams: per-channel vectors must have length D");
    }
};

/// into += g, tensor by tensor (shapes must match).
inline void accumulate(SelectiveParams& into, const SelectiveParams& g)
{
    require(into.channels == g.channels && into.state == g.state, "accumulate: shape mismatch");
    auto add = [](std::vector<double>& a, const std::vector<double>& b) {
        for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    add(into.aLog.data(), g.aLog.data());
    add(into.wB.data(), g.wB.data());
    add(into.wC.data(), g.wC.data());
    add(into.wDelta, g.wDelta);
    add(into.thetaDelta, g.thetaDelta);
    add(into.skip, g.skip);
}

struct SelectiveInit {
    double dtMin{1e-3};
    double dtMax{1e-1};
    double skip{1.0};
};

/// a[d][j] = -(j+1); softplus(theta) log-uniform in [dtMin, dtMax]; projections ~ N(0, 1/D).
inline SelectiveParams init_selective(std::size_t d, std::size_t n, Rng& rng, const SelectiveInit& init = {})
{
    require(init.dtMin > 0.0 && init.dtMax >= init.dtMin, "init_selective: need 0 < dtMin <= dtMax");
    SelectiveParams p(d, n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t c = 0; c < d; ++c) {
        for (std::size_t j = 0; j < n; ++j) p.aLog(c, j) = std::log(static_cast<double>(j + 1));
    }
    for (double& w : p.wB.data()) w = rng.normal(0.0, scale);
    for (double& w : p.wC.data()) w = rng.normal(0.0, scale);
    for (double& w : p.wDelta) w = rng.normal(0.0, 0.1 * scale);
    for (std::size_t c = 0; c < d; ++c) {
        const double dt = std::exp(rng.uniform(std::log(init.dtMin), std::log(init.dtMax)));
        p.thetaDelta[c] = softplus_inverse(dt);
        p.skip[c] = init.skip;
    }
    return p;
}

struct Projections {
    std::vector<double> delta;  // D
    std::vector<double> b;      // N
    std::vector<double> c;      // N
};

inline Projections selective_projections(const SelectiveParams& p, const double* xn)
{
    Projections out{std::vector<double>(p.channels), std::vector<double>(p.state, 0.0), std::vector<double>(p.state, 0.0)};
    double z = 0.0;
    for (std::size_t d = 0; d < p.channels; ++d) z += p.wDelta[d] * xn[d];
    for (std::size_t d = 0; d < p.channels; ++d) out.delta[d] = softplus(p.thetaDelta[d] + z);
    for (std::size_t j = 0; j < p.state; ++j) {
        double bj = 0.0;
        double cj = 0.0;
        for (std::size_t d = 0; d < p.channels; ++d) {
            bj += p.wB(j, d) * xn[d];
            cj += p.wC(j, d) * xn[d];
        }
        out.b[j] = bj;
        out.c[j] = cj;
    }
    return out;
}

inline Projections selective_projections(const SelectiveParams& p, const std::vector<double>& xn)
{
    require(xn.size() == p.channels, "selective_projections: input width != D");
    return selective_projections(p, xn.data());
}

struct Zoh {
    double aBar;
    double bScale;
};

/// aBar = e^{delta a}; bScale = delta (approximate) or (e^{delta a} - 1)/a (exact).
inline Zoh discretize_zoh(double a, double delta, bool exact)
{
    require(a < 0.0, "discretize_zoh: a must be negative");
    require(delta > 0.0, "discretize_zoh: delta must be positive");
    const double aBar = std::exp(delta * a);
    return {aBar, exact ? std::expm1(delta * a) / a : delta};
}

struct LayerOptions {
    ScanPath path{ScanPath::parallel};
    bool exactZoh{false};
    unsigned workers{1};
};

/// Per-step discretized quantities for a whole sequence (row n, index d*N + j).
struct DriveSet {
    std::size_t length{0};
    std::size_t channels{0};
    std::size_t state{0};
    bool exactZoh{false};
    std::vector<double> zPre;   // L, wDelta . x_n
    Matrix delta;               // L x D
    Matrix b;                   // L x N
    Matrix c;                   // L x N
    std::vector<double> aBar;   // L x D*N
    std::vector<double> drive;  // L x D*N, g_n = Bbar_n x_n

    [[nodiscard]] std::size_t width() const { return channels * state; }
    const double* aBar_at(std::size_t n) const { return aBar.data() + n * width(); }
    const double* drive_at(std::size_t n) const { return drive.data() + n * width(); }
};

inline DriveSet compute_drives(const SelectiveParams& p, const RealSeq& x, const LayerOptions& opts = {},
                               FlopCounter* fc = nullptr)
{
    p.validate();
    require_sequence(x, "selective layer");
    require(x.cols() == p.channels, "selective layer: input channels != D");
    const std::size_t len = x.rows();
    const std::size_t dd = p.channels;
    const std::size_t nn = p.state;
    DriveSet ds;
    ds.length = len;
    ds.channels = dd;
    ds.state = nn;
    ds.exactZoh = opts.exactZoh;
    ds.zPre.resize(len);
    ds.delta = Matrix(len, dd);
    ds.b = Matrix(len, nn);
    ds.c = Matrix(len, nn);
    ds.aBar.resize(len * dd * nn);
    ds.drive.resize(len * dd * nn);
    for (std::size_t n = 0; n < len; ++n) {
        const double* xn = x.row(n);
        double z = 0.0;
        for (std::size_t d = 0; d < dd; ++d) z += p.wDelta[d] * xn[d];
        ds.zPre[n] = z;
        const Projections pr = selective_projections(p, xn);
        for (std::size_t d = 0; d < dd; ++d) ds.delta(n, d) = pr.delta[d];
        for (std::size_t j = 0; j < nn; ++j) {
            ds.b(n, j) = pr.b[j];
            ds.c(n, j) = pr.c[j];
        }
        for (std::size_t d = 0; d < dd; ++d) {
            for (std::size_t j = 0; j < nn; ++j) {
                const Zoh zoh = discretize_zoh(p.a(d, j), pr.delta[d], opts.exactZoh);
                const std::size_t w = n * dd * nn + d * nn + j;
                ds.aBar[w] = zoh.aBar;
                ds.drive[w] = zoh.bScale * pr.b[j] * xn[d];
            }
        }
    }
    // projections (3 dot products of length D per output) + softplus + exp + drive
    count(fc, len * (2 * dd + 4 * nn * dd + 3 * dd + 5 * dd * nn));
    return ds;
}

/// Drives with Delta, B, C supplied externally (frozen projections).
inline DriveSet frozen_drives(const SelectiveParams& p, const RealSeq& x, const Matrix& delta, const Matrix& b,
                              const Matrix& c, bool exactZoh = false)
{
    p.validate();
    require_sequence(x, "frozen_drives");
    const std::size_t len = x.rows();
    require(x.cols() == p.channels && delta.rows() == len && delta.cols() == p.channels && b.rows() == len &&
                b.cols() == p.state && c.rows() == len && c.cols() == p.state,
            "frozen_drives: shape mismatch");
    DriveSet ds;
    ds.length = len;
    ds.channels = p.channels;
    ds.state = p.state;
    ds.exactZoh = exactZoh;
    ds.zPre.assign(len, 0.0);
    ds.delta = delta;
    ds.b = b;
    ds.c = c;
    ds.aBar.resize(len * ds.width());
    ds.drive.resize(len * ds.width());
    for (std::size_t n = 0; n < len; ++n) {
        for (std::size_t d = 0; d < p.channels; ++d) {
            for (std::size_t j = 0; j < p.state; ++j) {
                const Zoh zoh = discretize_zoh(p.a(d, j), delta(n, d), exactZoh);
                const std::size_t w = n * ds.width() + d * p.state + j;
                ds.aBar[w] = zoh.aBar;
                ds.drive[w] = zoh.bScale * b(n, j) * x(n, d);
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// Recurrence cores.
//
// A core exposes
//   Cache forward(const DriveSet&, const LayerOptions&, FlopCounter*) const;
//   Grad  backward(const DriveSet&, const Cache&, const std::vector<double>& dReadout) const;
// where Cache::readout is L x D*N and Grad carries dL/dAbar, dL/dg, the
// gradient of the core's own raw parameters, and per-step squared norms of
// the state adjoint dL/ds_n.

struct CoreGrad {
    std::vector<double> dABar;       // L x W
    std::vector<double> dDrive;      // L x W
    std::vector<double> dParams;     // core raw parameters
    std::vector<double> adjointSq;   // L, ||dL/ds_n||^2
};

struct VanillaCore {
    struct Cache {
        std::vector<double> readout;  // h, L x W
    };

    static constexpr const char* name = "vanilla";
    [[nodiscard]] std::vector<double> raw() const { return {}; }
    void set_raw(const std::vector<double>& /*v*/) {}
    [[nodiscard]] std::vector<std::string> raw_names() const { return {}; }

    Cache forward(const DriveSet& ds, const LayerOptions& opts, FlopCounter* fc = nullptr) const
    {
        const std::size_t w = ds.width();
        std::vector<scan::AffineElement<double>> elements;
        elements.reserve(ds.length);
        for (std::size_t n = 0; n < ds.length; ++n) {
            elements.push_back({scan::Diagonal<double>{std::vector<double>(ds.aBar_at(n), ds.aBar_at(n) + w)},
                                std::vector<double>(ds.drive_at(n), ds.drive_at(n) + w)});
        }
        auto out = scan::run_scan(elements, std::vector<double>(w, 0.0), opts.path, {false, opts.workers});
        count(fc, scan::scan_flops(scan::TransitionKind::diagonal, out, opts.path));
        return {std::move(out.states)};
    }

    CoreGrad backward(const DriveSet& ds, const Cache& cache, const std::vector<double>& dR) const
    {
        const std::size_t w = ds.width();
        const std::size_t len = ds.length;
        CoreGrad g{std::vector<double>(len * w), std::vector<double>(len * w), {}, std::vector<double>(len, 0.0)};
        std::vector<double> lam(w, 0.0);
        for (std::size_t n = len; n-- > 0;) {
            const double* next = n + 1 < len ? ds.aBar_at(n + 1) : nullptr;
            double sq = 0.0;
            for (std::size_t i = 0; i < w; ++i) {
                lam[i] = dR[n * w + i] + (next != nullptr ? next[i] * lam[i] : 0.0);
                const double hPrev = n > 0 ? cache.readout[(n - 1) * w + i] : 0.0;
                g.dABar[n * w + i] = lam[i] * hPrev;
                g.dDrive[n * w + i] = lam[i];
                sq += lam[i] * lam[i];
            }
            g.adjointSq[n] = sq;
        }
        return g;
    }
};

// ---------------------------------------------------------------------------
// Layer forward/backward shared by every core.

template <class Core>
struct LayerCache {
    RealSeq x;
    DriveSet drives;
    typename Core::Cache core;
};

template <class Core>
struct LayerResult {
    RealSeq y;
    LayerCache<Core> cache;
};

template <class Core>
LayerResult<Core> layer_forward_from_drives(const SelectiveParams& p, const Core& core, const RealSeq& x, DriveSet ds,
                                            const LayerOptions& opts = {}, FlopCounter* fc = nullptr)
{
    const std::size_t len = ds.length;
    const std::size_t dd = ds.channels;
    const std::size_t nn = ds.state;
    auto coreCache = core.forward(ds, opts, fc);
    RealSeq y(len, dd);
    for (std::size_t n = 0; n < len; ++n) {
        for (std::size_t d = 0; d < dd; ++d) {
            const double* r = coreCache.readout.data() + n * dd * nn + d * nn;
            double acc = p.skip[d] * x(n, d);
            for (std::size_t j = 0; j < nn; ++j) acc += ds.c(n, j) * r[j];
            y(n, d) = acc;
        }
    }
    count(fc, len * dd * (2 * nn + 2));
    return {std::move(y), LayerCache<Core>{x, std::move(ds), std::move(coreCache)}};
}

template <class Core>
LayerResult<Core> layer_forward(const SelectiveParams& p, const Core& core, const RealSeq& x,
                                const LayerOptions& opts = {}, FlopCounter* fc = nullptr)
{
    DriveSet ds = compute_drives(p, x, opts, fc);
    return layer_forward_from_drives(p, core, x, std::move(ds), opts, fc);
}

struct LayerGrad {
    SelectiveParams params;
    std::vector<double> core;       // gradient of the core's raw parameters
    RealSeq x;                      // dL/dx
    std::vector<double> adjointSq;  // per-step ||dL/ds_n||^2
};

template <class Core>
LayerGrad layer_backward(const SelectiveParams& p, const Core& core, const LayerCache<Core>& cache, const RealSeq& gY)
{
    const DriveSet& ds = cache.drives;
    const RealSeq& x = cache.x;
    const std::size_t len = ds.length;
    const std::size_t dd = ds.channels;
    const std::size_t nn = ds.state;
    const std::size_t w = dd * nn;
    require(gY.rows() == len && gY.cols() == dd, "layer_backward: gradY shape does not match the cached forward");
    require(x.rows() == len && x.cols() == dd && p.channels == dd && p.state == nn,
            "layer_backward: cache does not match parameters");
    require(cache.core.readout.size() == len * w, "layer_backward: core cache does not match drives");

    LayerGrad g{SelectiveParams(dd, nn), {}, RealSeq(len, dd), {}};
    Matrix dB(len, nn);
    Matrix dC(len, nn);
    std::vector<double> dR(len * w);
    for (std::size_t n = 0; n < len; ++n) {
        for (std::size_t d = 0; d < dd; ++d) {
            const double gy = gY(n, d);
            g.params.skip[d] += gy * x(n, d);
            g.x(n, d) += gy * p.skip[d];
            const double* r = cache.core.readout.data() + n * w + d * nn;
            for (std::size_t j = 0; j < nn; ++j) {
                dR[n * w + d * nn + j] = ds.c(n, j) * gy;
                dC(n, j) += gy * r[j];
            }
        }
    }

    CoreGrad cg = core.backward(ds, cache.core, dR);
    g.core = std::move(cg.dParams);
    g.adjointSq = std::move(cg.adjointSq);

    Matrix dA(dd, nn);  // dL/da
    std::vector<double> dZ(len, 0.0);
    for (std::size_t n = 0; n < len; ++n) {
        for (std::size_t d = 0; d < dd; ++d) {
            const double delta = ds.delta(n, d);
            const double xd = x(n, d);
            double dDelta = 0.0;
            for (std::size_t j = 0; j < nn; ++j) {
                const std::size_t i = n * w + d * nn + j;
                const double a = p.a(d, j);
                const double aBar = ds.aBar[i];
                const double dAbar = cg.dABar[i];
                const double dG = cg.dDrive[i];
                dDelta += dAbar * aBar * a;
                dA(d, j) += dAbar * aBar * delta;
                const double bj = ds.b(n, j);
                if (ds.exactZoh) {
                    const double scale = std::expm1(delta * a) / a;
                    const double dScale = dG * bj * xd;
                    dB(n, j) += dG * scale * xd;
                    g.x(n, d) += dG * scale * bj;
                    dDelta += dScale * aBar;
                    dA(d, j) += dScale * (delta * a * aBar - std::expm1(delta * a)) / (a * a);
                } else {
                    dDelta += dG * bj * xd;
                    dB(n, j) += dG * delta * xd;
                    g.x(n, d) += dG * delta * bj;
                }
            }
            const double dPre = dDelta * sigmoid(p.thetaDelta[d] + ds.zPre[n]);
            g.params.thetaDelta[d] += dPre;
            dZ[n] += dPre;
        }
    }
    for (std::size_t d = 0; d < dd; ++d) {
        for (std::size_t j = 0; j < nn; ++j) g.params.aLog(d, j) = dA(d, j) * p.a(d, j);
    }
    for (std::size_t n = 0; n < len; ++n) {
        const double* xn = x.row(n);
        for (std::size_t d = 0; d < dd; ++d) {
            g.params.wDelta[d] += dZ[n] * xn[d];
            g.x(n, d) += dZ[n] * p.wDelta[d];
        }
        for (std::size_t j = 0; j < nn; ++j) {
            const double db = dB(n, j);
            const double dc = dC(n, j);
            for (std::size_t d = 0; d < dd; ++d) {
                g.params.wB(j, d) += db * xn[d];
                g.params.wC(j, d) += dc * xn[d];
                g.x(n, d) += p.wB(j, d) * db + p.wC(j, d) * dc;
            }
        }
    }
    return g;
}

// ---------------------------------------------------------------------------
// Vanilla entry points.

struct SsmForward {
    RealSeq y;
    std::vector<double> hidden;  // L x D x N
    LayerCache<VanillaCore> cache;
};

inline SsmForward ssm_forward(const SelectiveParams& p, const RealSeq& x, const LayerOptions& opts = {},
                              FlopCounter* fc = nullptr)
{
    auto r = layer_forward(p, VanillaCore{}, x, opts, fc);
    std::vector<double> hidden = r.cache.core.readout;
    return {std::move(r.y), std::move(hidden), std::move(r.cache)};
}

inline LayerGrad ssm_backward(const SelectiveParams& p, const SsmForward& fwd, const RealSeq& gradY)
{
    return layer_backward(p, VanillaCore{}, fwd.cache, gradY);
}

}  // namespace mssm::ssm

#endif  // MSSM_SELECTIVE_SSM_HPP
