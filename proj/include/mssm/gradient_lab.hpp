#ifndef MSSM_GRADIENT_LAB_HPP
#define MSSM_GRADIENT_LAB_HPP

// Gradient propagation through the recurrences.
//
// Vanilla: dL/dh_t = dL/dh_T * prod_{n=t+1}^T Abar_n  (elementwise).
// Momentum: s_n = M'_n s_{n-1}, M'_n = [[Abar_n, beta I], [0, beta I]], so
//   prod_{n=t+1}^T M'_n = [[U, R], [0, beta^{T-t} I]]
//   U = prod Abar_n,  R = sum_{k=t+1}^T (prod_{n=k+1}^T Abar_n) beta^{k-t}.

#include <cmath>
#include <cstddef>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "affine_scan.hpp"
#include "har/data.hpp"
#include "har/model.hpp"
#include "har/train.hpp"
#include "numkit.hpp"

namespace mssm::grad {

inline void check_horizon(std::size_t steps, std::size_t t, std::size_t T, const char* who)
{
    if (t > T || T >= steps) {
        throw std::out_of_range(std::string(who) + ": need t <= T < " + std::to_string(steps) + " (t=" +
                                std::to_string(t) + ", T=" + std::to_string(T) + ")");
    }
}

/// prod_{n=t+1}^T aBars[n]; the empty product (t == T) is all ones.
inline DiagVec vanilla_jacobian_product(const std::vector<DiagVec>& aBars, std::size_t t, std::size_t T)
{
    check_horizon(aBars.size(), t, T, "vanilla_jacobian_product");
    DiagVec out(aBars[T].size(), 1.0);
    for (std::size_t n = t + 1; n <= T; ++n) {
        require(aBars[n].size() == out.size(), "vanilla_jacobian_product: width mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] *= aBars[n][i];
    }
    return out;
}

struct JacobianBlock {
    DiagVec upperLeft;
    DiagVec upperRight;
    double lowerRight{1.0};
    std::size_t horizon{0};
    double oracleError{0.0};  // max |closed form - dense product| over all entries
};

/// Dense prod_{n=t+1}^T M'_n (2W x 2W, row-major), the oracle for the block form.
inline Matrix dense_momentum_product(const std::vector<DiagVec>& aBars, double beta, std::size_t t, std::size_t T)
{
    check_horizon(aBars.size(), t, T, "dense_momentum_product");
    const std::size_t w = aBars[T].size();
    Matrix acc(2 * w, 2 * w);
    for (std::size_t i = 0; i < 2 * w; ++i) acc(i, i) = 1.0;
    for (std::size_t n = t + 1; n <= T; ++n) {
        const scan::MomentumBlock<double> blk{aBars[n], DiagVec(w, beta), beta};
        const auto dense = scan::densify(scan::Transition<double>(blk));
        Matrix next(2 * w, 2 * w);
        for (std::size_t r = 0; r < 2 * w; ++r) {
            for (std::size_t k = 0; k < 2 * w; ++k) {
                const double m = dense.at(r, k);
                if (m == 0.0) continue;
                for (std::size_t c = 0; c < 2 * w; ++c) next(r, c) += m * acc(k, c);
            }
        }
        acc = std::move(next);
    }
    return acc;
}

inline JacobianBlock momentum_jacobian_product(const std::vector<DiagVec>& aBars, double beta, std::size_t t,
                                               std::size_t T)
{
    check_horizon(aBars.size(), t, T, "momentum_jacobian_product");
    const std::size_t w = aBars[T].size();
    JacobianBlock jb;
    jb.horizon = T - t;
    jb.upperLeft.assign(w, 1.0);
    jb.upperRight.assign(w, 0.0);
    double betaPow = 1.0;
    // Fold in M'_n for n = t+1..T: R <- Abar_n R + beta * beta^{n-1-t}.
    for (std::size_t n = t + 1; n <= T; ++n) {
        for (std::size_t i = 0; i < w; ++i) {
            jb.upperRight[i] = aBars[n][i] * jb.upperRight[i] + beta * betaPow;
            jb.upperLeft[i] *= aBars[n][i];
        }
        betaPow *= beta;
    }
    jb.lowerRight = std::pow(beta, static_cast<double>(jb.horizon));

    const Matrix dense = dense_momentum_product(aBars, beta, t, T);
    double err = 0.0;
    for (std::size_t r = 0; r < 2 * w; ++r) {
        for (std::size_t c = 0; c < 2 * w; ++c) {
            double want = 0.0;
            if (r < w && c == r) want = jb.upperLeft[r];
            if (r < w && c == r + w) want = jb.upperRight[r];
            if (r >= w && c == r) want = jb.lowerRight;
            err = std::max(err, std::abs(dense(r, c) - want));
        }
    }
    jb.oracleError = err;
    return jb;
}

// ---------------------------------------------------------------------------
// Finite differences.

using ScalarFn = std::function<double(const std::vector<double>&)>;

/// Central differences (f(p + h e_i) - f(p - h e_i)) / 2h.
inline std::vector<double> finite_diff_oracle(const ScalarFn& f, const std::vector<double>& point, double step)
{
    require(step > 0.0, "finite_diff_oracle: step must be positive");
    std::vector<double> p = point;
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + step;
        const double up = f(p);
        p[i] = orig - step;
        const double down = f(p);
        p[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw std::domain_error("finite_diff_oracle: non-finite value at coordinate " + std::to_string(i));
        }
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

struct GradCheck {
    double worstRel{0.0};    // over checked coordinates
    std::size_t worstIndex{0};
    std::size_t checked{0};  // coordinates with |grad| above the floor
};

/// Compares an analytic gradient with central differences at steps 1e-4 and
/// 1e-5, keeping the closer of the two per coordinate.
inline GradCheck check_gradient(const ScalarFn& f, const std::vector<double>& point,
                                const std::vector<double>& analytic, double floor = 1e-8)
{
    require(point.size() == analytic.size(), "check_gradient: size mismatch");
    const auto coarse = finite_diff_oracle(f, point, 1e-4);
    const auto fine = finite_diff_oracle(f, point, 1e-5);
    GradCheck gc;
    for (std::size_t i = 0; i < point.size(); ++i) {
        if (std::abs(analytic[i]) <= floor) continue;
        ++gc.checked;
        const double e1 = std::abs(coarse[i] - analytic[i]) / std::abs(analytic[i]);
        const double e2 = std::abs(fine[i] - analytic[i]) / std::abs(analytic[i]);
        const double e = std::min(e1, e2);
        if (e > gc.worstRel) {
            gc.worstRel = e;
            gc.worstIndex = i;
        }
    }
    return gc;
}

// ---------------------------------------------------------------------------
// Gradient-norm reports.

struct GradientReport {
    std::string descriptor;
    Matrix norms;  // time step x (1 + epochs); column e is after e epochs
};

inline void write_report_csv(std::ostream& out, const GradientReport& r)
{
    const auto prec = out.precision(17);
    out << "t";
    for (std::size_t e = 0; e < r.norms.cols(); ++e) out << ",epoch_" << e;
    out << "\n";
    for (std::size_t t = 0; t < r.norms.rows(); ++t) {
        out << (t + 1);
        for (std::size_t e = 0; e < r.norms.cols(); ++e) out << ',' << r.norms(t, e);
        out << "\n";
    }
    out.precision(prec);
}

/// ||dL/ds_1|| / ||dL/ds_L|| in the final column.
inline double first_last_ratio(const GradientReport& r)
{
    require(r.norms.rows() >= 1 && r.norms.cols() >= 1, "first_last_ratio: empty report");
    const std::size_t e = r.norms.cols() - 1;
    return r.norms(0, e) / r.norms(r.norms.rows() - 1, e);
}


// ---------------------------------------------------------------------------
// Gradient-flow experiment.

struct HeatmapSpec {
    har::ModelConfig model;
    har::DelayedRecallSpec task;
    har::TrainConfig train;
    std::size_t valCount{64};
    std::size_t probe{16};  // training samples whose gradient is measured
};

/// Trains on a delayed-recall task and records, before training and after
/// each epoch, ||dL/ds_t||_2 of the last SSM layer's recurrence state on a
/// fixed probe batch (train-mode statistics, dropout off).
inline GradientReport gradient_heatmap(const HeatmapSpec& spec, std::size_t epochs, Rng& rng)
{
    require(spec.probe >= 1, "gradient_heatmap: probe batch must be nonempty");
    har::DelayedRecallSpec ts = spec.task;
    const har::Dataset trainSet = har::make_delayed_recall(rng, ts);
    ts.count = spec.valCount;
    const har::Dataset valSet = har::make_delayed_recall(rng, ts);
    Rng initRng = rng.split();
    const har::ModelParams init = har::init_model(spec.model, initRng);
    har::TrainConfig tc = spec.train;
    tc.maxEpochs = epochs;
    tc.patience = epochs + 1;  // the report covers every epoch

    std::vector<const RealSeq*> xs;
    std::vector<int> ys;
    for (std::size_t i = 0; i < std::min(spec.probe, trainSet.size()); ++i) {
        xs.push_back(&trainSet.x[i]);
        ys.push_back(trainSet.y[i]);
    }
    GradientReport rep;
    rep.descriptor = std::string("variant=") + har::variant_name(spec.model.variant) +
                     " L=" + std::to_string(spec.task.length) + " delay=" + std::to_string(spec.task.delay);
    rep.norms = Matrix(spec.task.length, epochs + 1);
    har::TrainHooks hooks;
    hooks.onEpoch = [&](std::size_t e, const har::ModelParams& p) {
        const auto bf = har::model_forward(p, xs, {har::Mode::train, false, tc.path});
        const auto bl = har::batch_loss(bf, ys);
        if (!std::isfinite(bl.loss)) throw har::DivergenceError(e, 0);
        const auto bb = har::model_backward(p, bf, bl.gradLogits);
        for (std::size_t t = 0; t < spec.task.length; ++t) rep.norms(t, e) = std::sqrt(bb.lastLayerAdjointSq[t]);
    };
    har::train(init, trainSet, valSet, tc, {}, hooks);
    return rep;
}

// ---------------------------------------------------------------------------
// Whole-model gradient check.

struct ModelGradCheckSpec {
    std::size_t dModel{8};
    std::size_t dState{3};
    std::size_t nLayers{2};
    std::size_t classes{3};
    std::size_t length{6};
    std::size_t batch{2};
    har::Pooling pooling{har::Pooling::mean};
};

/// Batch cross-entropy of a small model (train-mode batchnorm, dropout off)
/// differentiated analytically and by central differences over every parameter.
inline GradCheck check_model_gradient(har::Variant variant, std::uint64_t seed, const ModelGradCheckSpec& s = {})
{
    Rng rng(seed);
    har::ModelConfig mc;
    mc.dModel = s.dModel;
    mc.dState = s.dState;
    mc.nLayers = s.nLayers;
    mc.numClasses = s.classes;
    mc.variant = variant;
    mc.pooling = s.pooling;
    mc.dropout = 0.0;
    mc.dtMin = 0.05;
    mc.dtMax = 0.5;
    // gammaVar near 1 makes the first normalized drives ~ sign(g) / sqrt(1 - gamma):
    // differentiable but too curved for 1e-4 steps.
    mc.gammaVar = 0.9;
    mc.eps = 1e-1;
    mc.phase = 0.4;
    mc.rho = 0.85;
    const har::ModelParams base = har::init_model(mc, rng);
    std::vector<RealSeq> xs(s.batch, RealSeq(s.length, mc.inChannels));
    std::vector<int> ys(s.batch);
    for (std::size_t b = 0; b < s.batch; ++b) {
        for (double& v : xs[b].data()) v = rng.normal();
        ys[b] = static_cast<int>(rng.below(s.classes));
    }
    std::vector<const RealSeq*> ptrs;
    for (const auto& x : xs) ptrs.push_back(&x);
    const har::ForwardOptions fo{har::Mode::train, false, ssm::ScanPath::parallel};

    const auto bf = har::model_forward(base, ptrs, fo);
    const auto bl = har::batch_loss(bf, ys);
    const auto bb = har::model_backward(base, bf, bl.gradLogits);
    const std::vector<double> analytic = har::flatten(bb.grad);
    har::ModelParams probe = base;
    const ScalarFn loss = [&](const std::vector<double>& flat) {
        har::unflatten(probe, flat);
        return har::batch_loss(har::model_forward(probe, ptrs, fo), ys).loss;
    };
    return check_gradient(loss, har::flatten(base), analytic);
}

}  // namespace mssm::grad

#endif  // MSSM_GRADIENT_LAB_HPP
