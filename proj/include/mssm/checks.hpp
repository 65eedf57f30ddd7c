#ifndef MSSM_CHECKS_HPP
#define MSSM_CHECKS_HPP

// Randomized property checks over the library, each reporting its worst-case
// error against a tolerance. Shared by the command-line `check` command and
// the acceptance suite.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "affine_scan.hpp"
#include "gradient_lab.hpp"
#include "heavyball_s4.hpp"
#include "momentum_variants.hpp"
#include "numkit.hpp"
#include "selective_ssm.hpp"

namespace mssm::checks {

struct CheckResult {
    std::string name;
    double worst{0.0};
    double tolerance{0.0};
    bool passed{false};
    std::string detail;
};

inline CheckResult verdict(std::string name, double worst, double tol, std::string detail = {})
{
    return {std::move(name), worst, tol, worst <= tol, std::move(detail)};
}

inline void write_report_csv(std::ostream& out, const std::vector<CheckResult>& rs)
{
    const auto prec = out.precision(17);
    out << "check,worst_error,tolerance,status,detail\n";
    for (const auto& r : rs) {
        out << r.name << ',' << r.worst << ',' << r.tolerance << ',' << (r.passed ? "pass" : "fail") << ',' << r.detail
            << "\n";
    }
    out.precision(prec);
}

// ---------------------------------------------------------------------------
// Random affine elements (contractive, so long scans stay O(1)).

inline std::size_t default_width(scan::TransitionKind k, std::size_t n)
{
    switch (k) {
    case scan::TransitionKind::dense: return std::min<std::size_t>(n, 8);
    case scan::TransitionKind::diagonal: return n;
    case scan::TransitionKind::momentum_block:
    case scan::TransitionKind::heavy_ball_block: return 2 * n;
    }
    return n;
}

inline scan::AffineElement<double> random_element(scan::TransitionKind k, std::size_t n, Rng& rng)
{
    using namespace scan;
    const std::size_t w = default_width(k, n);
    std::vector<double> offset(w);
    for (double& v : offset) v = rng.uniform(-1.0, 1.0);
    switch (k) {
    case TransitionKind::dense: {
        Dense<double> m{w, std::vector<double>(w * w)};
        for (double& v : m.m) v = rng.uniform(-0.9, 0.9) / static_cast<double>(w);
        return {m, offset};
    }
    case TransitionKind::diagonal: {
        Diagonal<double> m{std::vector<double>(n)};
        for (double& v : m.d) v = rng.uniform(-0.99, 0.99);
        return {m, offset};
    }
    case TransitionKind::momentum_block: {
        MomentumBlock<double> m{std::vector<double>(n), std::vector<double>(n), rng.uniform(0.0, 0.99)};
        for (double& v : m.p) v = rng.uniform(0.0, 0.99);
        for (double& v : m.q) v = m.r;
        return {m, offset};
    }
    case TransitionKind::heavy_ball_block: {
        HeavyBallBlock<double> m;
        const double gamma = rng.uniform(0.1, 2.0);
        const double dt = rng.uniform(0.05, 1.0);
        for (std::size_t i = 0; i < n; ++i) m.blocks.push_back(heavyball::schur_inverse(gamma, dt, rng.uniform(0.0, 4.0)));
        return {m, offset};
    }
    }
    throw ContractError("random_element: unknown kind");
}

inline std::vector<scan::AffineElement<double>> random_elements(scan::TransitionKind k, std::size_t len, std::size_t n,
                                                               Rng& rng)
{
    std::vector<scan::AffineElement<double>> out;
    out.reserve(len);
    for (std::size_t i = 0; i < len; ++i) out.push_back(random_element(k, n, rng));
    return out;
}

/// Parallel vs sequential scan over lengths x kinds x seeds; worst is the
/// largest |par - seq| / max(rel |seq|, absFloor), passing when <= 1.
inline CheckResult scan_equivalence(const std::vector<std::size_t>& lengths, std::size_t seeds, double rel = 1e-9,
                                    double absFloor = 1e-12, std::size_t n = 16)
{
    using scan::TransitionKind;
    double worst = 0.0;
    std::string where;
    for (const auto kind : {TransitionKind::dense, TransitionKind::diagonal, TransitionKind::momentum_block,
                            TransitionKind::heavy_ball_block}) {
        for (const std::size_t len : lengths) {
            for (std::size_t s = 0; s < seeds; ++s) {
                Rng rng(1000 * s + len);
                const auto el = random_elements(kind, len, n, rng);
                std::vector<double> s0(default_width(kind, n));
                for (double& v : s0) v = rng.uniform(-1.0, 1.0);
                const auto seq = scan::scan_sequential(el, s0);
                const auto par = scan::scan_parallel(el, s0);
                const double v = scan::worst_violation(par.states, seq.states, rel, absFloor);
                if (v > worst) {
                    worst = v;
                    where = std::string(scan::kind_name(kind)) + " L=" + std::to_string(len) + " seed=" + std::to_string(s);
                }
            }
        }
    }
    return verdict("scan_equivalence", worst, 1.0, where);
}

// ---------------------------------------------------------------------------
// Heavy-ball discretization.

/// max |M Minv - I| over random nonsingular (gamma, dt, a).
inline CheckResult inverse_identity(std::size_t draws, heavyball::LowerLeftSign sign, std::uint64_t seed = 11,
                                    double tol = 1e-12)
{
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t i = 0; i < draws; ++i) {
        const double gamma = rng.uniform(1e-3, 10.0);
        const double dt = std::exp(rng.uniform(std::log(1e-4), std::log(1.0)));
        const double a = rng.uniform(-0.5, 50.0);
        const auto m = heavyball::step_matrix(gamma, dt, a);
        const auto minv = heavyball::schur_inverse(gamma, dt, a, sign);
        worst = std::max(worst, heavyball::inverse_residual(m, minv));
    }
    return verdict("inverse", worst, tol,
                   sign == heavyball::LowerLeftSign::derived ? "lower-left +dt*S" : "lower-left -dt*S (mutation)");
}

/// max over draws (a >= 0, gamma > 0, dt > 0) of rho(Minv) - 1.
inline CheckResult stability(std::size_t draws, std::uint64_t seed = 12, double tol = 1e-12)
{
    Rng rng(seed);
    double worst = -1.0;
    for (std::size_t i = 0; i < draws; ++i) {
        heavyball::HeavyBallParams p;
        p.gamma = std::exp(rng.uniform(std::log(1e-3), std::log(10.0)));
        p.aDiag = {rng.uniform(0.0, 100.0), std::exp(rng.uniform(std::log(1e-6), std::log(1e3))), 0.0};
        p.B.assign(3, 1.0);
        p.C.assign(3, 1.0);
        const double dt = std::exp(rng.uniform(std::log(1e-4), std::log(10.0)));
        for (double r : heavyball::spectral_radius(p, dt)) worst = std::max(worst, r - 1.0);
    }
    return verdict("stability", std::max(worst, 0.0), tol, "max(rho(Minv) - 1, 0)");
}

// ---------------------------------------------------------------------------
// Momentum recurrences.

/// Stepwise momentum trajectory vs MomentumBlock scan (parallel path).
inline CheckResult affine_form(std::size_t instances, std::size_t d = 4, std::size_t n = 8, std::size_t len = 128,
                               std::uint64_t seed = 13, double tol = 1e-12)
{
    Rng rng(seed);
    const std::size_t w = d * n;
    double worst = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
        const momentum::MomentumParams mp{rng.uniform(0.0, 2.0), logit(rng.uniform(0.01, 0.999))};
        std::vector<DiagVec> aBars(len, DiagVec(w));
        std::vector<std::vector<double>> gs(len, std::vector<double>(w));
        std::vector<scan::AffineElement<double>> el;
        for (std::size_t t = 0; t < len; ++t) {
            for (double& v : aBars[t]) v = rng.uniform(0.0, 1.0);
            for (double& v : gs[t]) v = rng.normal();
            el.push_back(momentum::build_affine(aBars[t], gs[t], mp));
        }
        const auto out = scan::scan_parallel(el, std::vector<double>(2 * w, 0.0));
        momentum::MomentumState st{std::vector<double>(w, 0.0), std::vector<double>(w, 0.0)};
        for (std::size_t t = 0; t < len; ++t) {
            st = momentum::momentum_step(st.v, st.h, aBars[t], gs[t], mp);
            const double* s = out.state(t);
            for (std::size_t i = 0; i < w; ++i) {
                const double scale = std::max({1.0, std::abs(st.h[i]), std::abs(st.v[i])});
                worst = std::max(worst, std::abs(s[i] - st.h[i]) / scale);
                worst = std::max(worst, std::abs(s[w + i] - st.v[i]) / scale);
            }
        }
    }
    return verdict("affine", worst, tol, "max |scan - stepwise| / max(1, |state|)");
}

struct JacobianChecks {
    CheckResult vanillaClosedForm;
    CheckResult vanillaMonotone;
    CheckResult denseOracle;
    CheckResult lowerRight;
    CheckResult semigroup;
};

inline JacobianChecks jacobian(std::size_t instances = 20, std::uint64_t seed = 14)
{
    JacobianChecks jc;
    {
        // dt = 0.5, a = -1, horizon 20: exp(-10).
        const std::vector<DiagVec> aBars(21, DiagVec{std::exp(0.5 * -1.0)});
        const double got = grad::vanilla_jacobian_product(aBars, 0, 20)[0];
        jc.vanillaClosedForm = verdict("jacobian_vanilla_closed_form", rel_error(got, std::exp(-10.0)), 1e-12,
                                       "dt=0.5 a=-1 horizon=20");
    }
    {
        const std::vector<DiagVec> aBars(101, DiagVec{std::exp(0.5 * -1.0), std::exp(0.01 * -0.3)});
        double prevMax = 1.0;
        double violations = 0.0;
        for (std::size_t h = 1; h <= 100; ++h) {
            const auto p = grad::vanilla_jacobian_product(aBars, 100 - h, 100);
            const double mx = *std::max_element(p.begin(), p.end());
            if (!(mx < prevMax)) violations += 1.0;
            prevMax = mx;
        }
        jc.vanillaMonotone = verdict("jacobian_vanilla_monotone", violations, 0.0, "non-decreasing steps over horizons 1..100");
    }
    {
        Rng rng(seed);
        double worst = 0.0;
        for (std::size_t k = 0; k < instances; ++k) {
            std::vector<DiagVec> aBars(51, DiagVec(6));
            for (auto& a : aBars) {
                for (double& v : a) v = rng.uniform(0.0, 1.0);
            }
            worst = std::max(worst, grad::momentum_jacobian_product(aBars, 0.95, 0, 50).oracleError);
        }
        jc.denseOracle = verdict("jacobian_dense_oracle", worst, 1e-10, "beta=0.95 horizon=50");
    }
    {
        const std::vector<DiagVec> aBars(102, DiagVec{0.5});
        const double got = grad::momentum_jacobian_product(aBars, 0.99, 0, 101).lowerRight;
        jc.lowerRight = verdict("jacobian_lower_right", std::abs(got - std::exp(101.0 * std::log(0.99))), 1e-9,
                                "beta=0.99 exponent 101");
    }
    {
        double worst = 0.0;
        const std::vector<DiagVec> aBars(80, DiagVec{0.5});
        for (const double beta : {0.0, 0.3, 0.9, 0.99, 0.999}) {
            for (std::size_t k = 0; k < 30; k += 7) {
                for (std::size_t m = 0; m < 40; m += 9) {
                    const double a = grad::momentum_jacobian_product(aBars, beta, 0, k).lowerRight;
                    const double b = grad::momentum_jacobian_product(aBars, beta, 0, m).lowerRight;
                    const double ab = grad::momentum_jacobian_product(aBars, beta, 0, k + m).lowerRight;
                    worst = std::max(worst, std::abs(a * b - ab));
                }
            }
        }
        jc.semigroup = verdict("jacobian_semigroup", worst, 1e-12, "beta^k beta^m = beta^(k+m)");
    }
    return jc;
}

/// Largest sup_n |v_n / (sqrt(m_n) + eps)| / (alpha B / eps) over random
/// parameter draws and drives uniform in [-B, B]; passes when <= 1 exactly.
inline CheckResult adam_bound(std::size_t draws, std::size_t steps, std::uint64_t seed = 15, std::size_t width = 4)
{
    Rng rng(seed);
    double worst = 0.0;
    std::string where;
    for (std::size_t k = 0; k < draws; ++k) {
        momentum::AdamMomentumParams ap;
        ap.alpha = rng.uniform(1e-3, 2.0);
        ap.beta = rng.uniform(0.0, 0.99);
        ap.gammaVar = rng.uniform(0.0, 0.999);
        ap.eps = std::exp(rng.uniform(std::log(1e-8), std::log(1e-4)));
        const double bound = std::exp(rng.uniform(std::log(0.1), std::log(10.0)));
        std::vector<double> drives(steps * width);
        for (double& g : drives) g = rng.uniform(-bound, bound);
        const auto sim = momentum::simulate_adam_updates(ap, drives, width);
        const double ratio = sim.supNormalized / momentum::normalized_update_bound(ap, bound).loose;
        if (ratio > worst) {
            worst = ratio;
            where = "draw " + std::to_string(k);
        }
    }
    return verdict("adam_bound", worst, 1.0, "sup normalized update / (alpha B / eps); " + where);
}

/// Complex momentum impulse response vs alpha * beta^k, plus the theta = 0 reduction.
struct ImpulseChecks {
    CheckResult closedForm;
    CheckResult realReduction;
};

inline ImpulseChecks impulse(std::size_t draws, std::size_t kmax = 200, std::uint64_t seed = 16)
{
    ImpulseChecks ic;
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < draws; ++k) {
        const momentum::ComplexMomentumParams cp{rng.uniform(0.0, 1.0), rng.uniform(-M_PI, M_PI), rng.uniform(0.01, 2.0)};
        // One channel, Abar = 0: h_k = v_k, a pure readout of the momentum trace.
        ssm::DriveSet ds;
        ds.length = kmax + 1;
        ds.channels = 1;
        ds.state = 1;
        ds.aBar.assign(kmax + 1, 0.0);
        ds.drive.assign(kmax + 1, 0.0);
        ds.drive[0] = 1.0;
        const auto cache = momentum::ComplexMomentumCore{cp}.forward(ds, {});
        for (std::size_t n = 0; n <= kmax; ++n) {
            const Complex want = momentum::impulse_response(cp, n);
            const Complex v = cache.states[2 * n + 1];
            const Complex h = cache.states[2 * n];
            worst = std::max({worst, (v - want).magnitude(), (h - want).magnitude()});
        }
    }
    ic.closedForm = verdict("impulse", worst, 1e-10, "max |v_k - alpha beta^k|, k <= " + std::to_string(kmax));

    double red = 0.0;
    for (std::size_t k = 0; k < 10; ++k) {
        const std::size_t d = 3;
        const std::size_t n = 4;
        const auto p = ssm::init_selective(d, n, rng, {0.01, 0.5, 1.0});
        RealSeq x(40, d);
        for (double& v : x.data()) v = rng.normal();
        const double rho = rng.uniform(0.05, 0.99);
        const double alpha = rng.uniform(0.1, 2.0);
        const auto yc = momentum::complex_forward(p, {rho, 0.0, alpha}, x).y;
        const auto ym = momentum::momentum_forward(p, {alpha, logit(rho)}, x).y;
        for (std::size_t i = 0; i < yc.size(); ++i) {
            red = std::max(red, std::abs(yc.data()[i] - ym.data()[i]) / std::max(1.0, std::abs(ym.data()[i])));
        }
    }
    ic.realReduction = verdict("impulse_real_reduction", red, 1e-12, "theta=0 complex vs real momentum");
    return ic;
}

/// Whole-model analytic vs finite-difference gradients for every variant.
inline CheckResult gradcheck(std::size_t seedsPerVariant, double tol = 1e-4)
{
    double worst = 0.0;
    std::string where;
    for (const auto v : {har::Variant::vanilla, har::Variant::momentum, har::Variant::complex, har::Variant::adam}) {
        for (std::uint64_t s = 1; s <= seedsPerVariant; ++s) {
            const auto gc = grad::check_model_gradient(v, s);
            if (gc.worstRel > worst) {
                worst = gc.worstRel;
                where = std::string(har::variant_name(v)) + " seed " + std::to_string(s);
            }
        }
    }
    return verdict("gradcheck", worst, tol, "relative error on |grad| > 1e-8; " + where);
}

// ---------------------------------------------------------------------------
// Reductions.

inline CheckResult momentum_vanilla_reduction(std::size_t instances = 10, std::uint64_t seed = 17)
{
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
        const auto p = ssm::init_selective(4, 5, rng, {0.01, 0.5, 1.0});
        RealSeq x(64, 4);
        for (double& v : x.data()) v = rng.normal();
        const momentum::MomentumParams off{1.0, -std::numeric_limits<double>::infinity()};  // beta = 0
        const auto ym = momentum::momentum_forward(p, off, x).y;
        const auto yv = ssm::ssm_forward(p, x).y;
        for (std::size_t i = 0; i < ym.size(); ++i) {
            worst = std::max(worst, std::abs(ym.data()[i] - yv.data()[i]) / std::max(1.0, std::abs(yv.data()[i])));
        }
    }
    return verdict("reduction_momentum_vanilla", worst, 1e-10, "beta=0, alpha=1");
}

inline CheckResult heavyball_timevarying_reduction(std::size_t instances = 10, std::uint64_t seed = 18)
{
    Rng rng(seed);
    double worst = 0.0;
    for (std::size_t k = 0; k < instances; ++k) {
        const std::size_t n = 6;
        const std::size_t len = 100;
        heavyball::HeavyBallParams p;
        p.gamma = rng.uniform(0.1, 3.0);
        for (std::size_t i = 0; i < n; ++i) {
            p.aDiag.push_back(rng.uniform(0.0, 5.0));
            p.B.push_back(rng.normal());
            p.C.push_back(rng.normal());
        }
        p.D = rng.normal();
        const double dt = rng.uniform(0.01, 1.0);
        RealSeq x(len, 1);
        for (double& v : x.data()) v = rng.normal();
        const auto d = heavyball::discretize_implicit(p, dt);
        const auto y0 = heavyball::hb_forward(p, d, x);
        const heavyball::TimeVaryingInputs tv{std::vector<double>(len, dt), std::vector<DiagVec>(len, p.aDiag),
                                              std::vector<std::vector<double>>(len, p.B)};
        const auto y1 = heavyball::hb_forward_timevarying(p, tv, x);
        for (std::size_t i = 0; i < len; ++i) {
            worst = std::max(worst, std::abs(y0.data()[i] - y1.data()[i]) / std::max(1.0, std::abs(y0.data()[i])));
        }
    }
    return verdict("reduction_heavyball_timevarying", worst, 1e-12, "constant dt, A, B");
}

// ---------------------------------------------------------------------------
// Scan benchmark.

struct BenchRow {
    scan::TransitionKind kind;
    std::size_t length;
    std::size_t n;
    double seqNs;
    double parNs;
    int combineDepth;
    std::uint64_t checksum;  // FNV-1a over the parallel-path state bytes
};

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ULL)
{
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline BenchRow bench_scan(scan::TransitionKind kind, std::size_t len, std::size_t n, std::size_t repeats,
                           std::uint64_t seed)
{
    Rng rng(seed);
    const auto el = random_elements(kind, len, n, rng);
    const std::vector<double> s0(default_width(kind, n), 0.0);
    auto median_ns = [&](auto&& fn) {
        std::vector<double> ts;
        for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            ts.push_back(std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count());
        }
        std::sort(ts.begin(), ts.end());
        return ts[ts.size() / 2];
    };
    scan::ScanOutput<double> par;
    const double seqNs = median_ns([&] { (void)scan::scan_sequential(el, s0); });
    const double parNs = median_ns([&] { par = scan::scan_parallel(el, s0); });
    return {kind, len, n, seqNs, parNs, par.combineDepth,
            fnv1a(par.states.data(), par.states.size() * sizeof(double))};
}

inline void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows)
{
    const auto prec = out.precision(17);
    out << "kind,L,N,seq_ns,par_ns,speedup,combine_depth\n";
    for (const auto& r : rows) {
        out << scan::kind_name(r.kind) << ',' << r.length << ',' << r.n << ',' << r.seqNs << ',' << r.parNs << ','
            << r.seqNs / r.parNs << ',' << r.combineDepth << "\n";
    }
    out.precision(prec);
}

/// Timing-free part of a benchmark: identical across runs with the same settings.
inline void write_digest_csv(std::ostream& out, const std::vector<BenchRow>& rows)
{
    out << "kind,L,N,combine_depth,checksum\n";
    for (const auto& r : rows) {
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(r.checksum));
        out << scan::kind_name(r.kind) << ',' << r.length << ',' << r.n << ',' << r.combineDepth << ',' << hex << "\n";
    }
}

/// Forward cost of the momentum layer relative to the vanilla layer on one random input.
struct LayerCostRatio {
    double flopRatio;
    double wallRatio;  // median over repeats
};

inline LayerCostRatio momentum_cost_ratio(std::size_t d, std::size_t n, std::size_t len, std::size_t repeats,
                                          std::uint64_t seed)
{
    Rng rng(seed);
    const auto p = ssm::init_selective(d, n, rng);
    RealSeq x(len, d);
    for (double& v : x.data()) v = rng.normal();
    ssm::FlopCounter fv;
    ssm::FlopCounter fm;
    std::vector<double> ratios;
    for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
        fv = {};
        fm = {};
        const auto t0 = std::chrono::steady_clock::now();
        (void)ssm::ssm_forward(p, x, {}, &fv);
        const auto t1 = std::chrono::steady_clock::now();
        (void)momentum::momentum_forward(p, {}, x, {}, &fm);
        const auto t2 = std::chrono::steady_clock::now();
        ratios.push_back(std::chrono::duration<double>(t2 - t1).count() / std::chrono::duration<double>(t1 - t0).count());
    }
    std::sort(ratios.begin(), ratios.end());
    return {static_cast<double>(fm.flops) / static_cast<double>(fv.flops), ratios[ratios.size() / 2]};
}

}  // namespace mssm::checks

#endif  // MSSM_CHECKS_HPP
