#ifndef MSSM_HAR_MODEL_HPP
#define MSSM_HAR_MODEL_HPP

// Classifier: conv front-end -> nLayers x (LayerNorm -> SSM mixer -> residual)
// -> temporal pooling -> linear head.
//
// Front-end: Conv1d (kernel k, stride 1, zero padding k/2) -> BatchNorm
// (batch statistics in train mode, running statistics in eval mode) -> ReLU
// -> inverted dropout (train mode only).

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "../momentum_variants.hpp"
#include "../numkit.hpp"
#include "../selective_ssm.hpp"

namespace mssm::har {

enum class Variant { vanilla, momentum, complex, adam };
enum class Pooling { mean, last };
enum class Mode { train, eval };

inline const char* variant_name(Variant v)
{
    switch (v) {
    case Variant::vanilla: return "vanilla";
    case Variant::momentum: return "momentum";
    case Variant::complex: return "complex";
    case Variant::adam: return "adam";
    }
    return "?";
}

inline Variant parse_variant(const std::string& s)
{
    if (s == "vanilla") return Variant::vanilla;
    if (s == "momentum") return Variant::momentum;
    if (s == "complex") return Variant::complex;
    if (s == "adam") return Variant::adam;
    throw ContractError("unknown variant '" + s + "' (expected vanilla|momentum|complex|adam)");
}

inline const char* pooling_name(Pooling p) { return p == Pooling::mean ? "mean" : "last"; }

inline Pooling parse_pooling(const std::string& s)
{
    if (s == "mean") return Pooling::mean;
    if (s == "last") return Pooling::last;
    throw ContractError("unknown pooling '" + s + "' (expected mean|last)");
}

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kLayerNormEps = 1e-5;

struct ModelConfig {
    std::size_t inChannels{6};
    std::size_t dModel{128};
    std::size_t nLayers{2};
    std::size_t dState{64};
    std::size_t numClasses{12};
    std::size_t kernel{3};
    Variant variant{Variant::momentum};
    Pooling pooling{Pooling::mean};
    double dropout{0.1};
    // variant parameters (initial values)
    double alpha{0.6};
    double beta{0.9};
    double rho{0.9};
    double phase{0.0};
    double gammaVar{0.999};
    double eps{1e-8};
    // selective layer
    double dtMin{1e-3};
    double dtMax{1e-1};
    bool exactZoh{false};

    void validate() const
    {
        require(inChannels >= 1 && dModel >= 1 && nLayers >= 1 && dState >= 1 && numClasses >= 2,
                "ModelConfig: counts must be positive (classes >= 2)");
        require(kernel % 2 == 1, "ModelConfig: kernel must be odd");
        require(dropout >= 0.0 && dropout < 1.0, "ModelConfig: dropout must lie in [0, 1)");
        require(dtMin > 0.0 && dtMax >= dtMin, "ModelConfig: need 0 < dt-min <= dt-max");
        if (variant == Variant::adam) require(eps >= 1e-12, "ModelConfig: eps must be >= 1e-12");
    }
};

/// Initial raw parameter vector of the recurrence core.
inline std::vector<double> initial_core_raw(const ModelConfig& c)
{
    switch (c.variant) {
    case Variant::vanilla: return {};
    case Variant::momentum: return {c.alpha, logit(c.beta)};
    case Variant::complex: return {c.rho, c.phase, c.alpha};
    case Variant::adam: return {c.alpha, logit(c.beta), logit(c.gammaVar)};
    }
    return {};
}

using AnyCore = std::variant<ssm::VanillaCore, momentum::HeavyBallMomentumCore, momentum::ComplexMomentumCore,
                             momentum::AdamMomentumCore>;

using AnyLayerCache =
    std::variant<ssm::LayerCache<ssm::VanillaCore>, ssm::LayerCache<momentum::HeavyBallMomentumCore>,
                 ssm::LayerCache<momentum::ComplexMomentumCore>, ssm::LayerCache<momentum::AdamMomentumCore>>;

inline AnyCore make_core(const ModelConfig& c, const std::vector<double>& raw)
{
    switch (c.variant) {
    case Variant::vanilla: return ssm::VanillaCore{};
    case Variant::momentum: {
        momentum::HeavyBallMomentumCore k;
        k.set_raw(raw);
        return k;
    }
    case Variant::complex: {
        momentum::ComplexMomentumCore k;
        k.set_raw(raw);
        return k;
    }
    case Variant::adam: {
        momentum::AdamMomentumCore k;
        k.set_raw(raw);
        k.eps = c.eps;
        return k;
    }
    }
    return ssm::VanillaCore{};
}

// ---------------------------------------------------------------------------
// Parameters.

struct BlockParams {
    std::vector<double> lnGamma;
    std::vector<double> lnBeta;
    ssm::SelectiveParams ssm;
    std::vector<double> core;
};

struct ModelParams {
    ModelConfig cfg;
    Matrix convW;  // dModel x (inChannels * kernel), column c * kernel + tap
    std::vector<double> convB;
    std::vector<double> bnGamma;
    std::vector<double> bnBeta;
    std::vector<double> bnMean;  // buffers
    std::vector<double> bnVar;
    std::vector<BlockParams> blocks;
    Matrix headW;  // numClasses x dModel
    std::vector<double> headB;

    using Shape = std::vector<std::size_t>;

    /// Visits (name, values, shape) of every learnable tensor in a fixed order.
    template <class Self, class F>
    static void visit(Self& self, F&& f)
    {
        const std::size_t d = self.cfg.dModel;
        f(std::string("conv.weight"), self.convW.data(), Shape{d, self.cfg.inChannels, self.cfg.kernel});
        f(std::string("conv.bias"), self.convB, Shape{d});
        f(std::string("bn.gamma"), self.bnGamma, Shape{d});
        f(std::string("bn.beta"), self.bnBeta, Shape{d});
        for (std::size_t i = 0; i < self.blocks.size(); ++i) {
            auto& b = self.blocks[i];
            const std::string pre = "blocks." + std::to_string(i) + ".";
            f(pre + "ln.gamma", b.lnGamma, Shape{d});
            f(pre + "ln.beta", b.lnBeta, Shape{d});
            ssm::SelectiveParams::visit(b.ssm, [&](const char* name, auto& v, const Shape& shape) {
                f(pre + "ssm." + name, v, shape);
            });
            f(pre + "core", b.core, Shape{b.core.size()});
        }
        f(std::string("head.weight"), self.headW.data(), Shape{self.cfg.numClasses, d});
        f(std::string("head.bias"), self.headB, Shape{self.cfg.numClasses});
    }

    /// Non-learnable state that a checkpoint must carry.
    template <class Self, class F>
    static void visit_buffers(Self& self, F&& f)
    {
        f(std::string("bn.running_mean"), self.bnMean, Shape{self.cfg.dModel});
        f(std::string("bn.running_var"), self.bnVar, Shape{self.cfg.dModel});
    }

    [[nodiscard]] std::size_t parameter_count() const
    {
        std::size_t n = 0;
        visit(*this, [&](const std::string&, const std::vector<double>& v, const Shape&) { n += v.size(); });
        return n;
    }
};

inline ModelParams init_model(const ModelConfig& cfg, Rng& rng)
{
    cfg.validate();
    ModelParams m;
    m.cfg = cfg;
    const std::size_t d = cfg.dModel;
    const std::size_t fanIn = cfg.inChannels * cfg.kernel;
    const double convBound = 1.0 / std::sqrt(static_cast<double>(fanIn));
    m.convW = Matrix(d, fanIn);
    for (double& w : m.convW.data()) w = rng.uniform(-convBound, convBound);
    m.convB.resize(d);
    for (double& b : m.convB) b = rng.uniform(-convBound, convBound);
    m.bnGamma.assign(d, 1.0);
    m.bnBeta.assign(d, 0.0);
    m.bnMean.assign(d, 0.0);
    m.bnVar.assign(d, 1.0);
    const ssm::SelectiveInit si{cfg.dtMin, cfg.dtMax, 1.0};
    for (std::size_t i = 0; i < cfg.nLayers; ++i) {
        BlockParams b;
        b.lnGamma.assign(d, 1.0);
        b.lnBeta.assign(d, 0.0);
        b.ssm = ssm::init_selective(d, cfg.dState, rng, si);
        b.core = initial_core_raw(cfg);
        m.blocks.push_back(std::move(b));
    }
    const double headBound = 1.0 / std::sqrt(static_cast<double>(d));
    m.headW = Matrix(cfg.numClasses, d);
    for (double& w : m.headW.data()) w = rng.uniform(-headBound, headBound);
    m.headB.assign(cfg.numClasses, 0.0);
    return m;
}

/// Same structure with every learnable entry set to zero (gradient accumulator).
inline ModelParams zeros_like(const ModelParams& p)
{
    ModelParams z = p;
    ModelParams::visit(z, [](const std::string&, std::vector<double>& v, const ModelParams::Shape&) {
        std::fill(v.begin(), v.end(), 0.0);
    });
    return z;
}

inline std::vector<double> flatten(const ModelParams& p)
{
    std::vector<double> out;
    ModelParams::visit(p, [&](const std::string&, const std::vector<double>& v, const ModelParams::Shape&) {
        out.insert(out.end(), v.begin(), v.end());
    });
    return out;
}

inline void unflatten(ModelParams& p, const std::vector<double>& flat)
{
    std::size_t at = 0;
    ModelParams::visit(p, [&](const std::string&, std::vector<double>& v, const ModelParams::Shape&) {
        require(at + v.size() <= flat.size(), "unflatten: vector too short");
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), v.size(), v.begin());
        at += v.size();
    });
    require(at == flat.size(), "unflatten: vector length does not match the model");
}

/// Returns (name, offset, size) of every learnable tensor in flatten order.
struct TensorSlot {
    std::string name;
    std::size_t offset;
    std::size_t size;
};

inline std::vector<TensorSlot> tensor_slots(const ModelParams& p)
{
    std::vector<TensorSlot> out;
    std::size_t at = 0;
    ModelParams::visit(p, [&](const std::string& name, const std::vector<double>& v, const ModelParams::Shape&) {
        out.push_back({name, at, v.size()});
        at += v.size();
    });
    return out;
}

// ---------------------------------------------------------------------------
// Building blocks.

/// out[t][o] = b[o] + sum_{c,tap} W[o][c*k+tap] * x[t + tap - k/2][c], zero outside [0, L).
inline RealSeq conv1d(const Matrix& w, const std::vector<double>& b, std::size_t kernel, const RealSeq& x)
{
    const std::size_t len = x.rows();
    const std::size_t cin = x.cols();
    const std::size_t cout = w.rows();
    require(w.cols() == cin * kernel && b.size() == cout, "conv1d: weight shape mismatch");
    const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
    RealSeq out(len, cout);
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t o = 0; o < cout; ++o) {
            double acc = b[o];
            for (std::size_t tap = 0; tap < kernel; ++tap) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tap) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                const double* xs = x.row(static_cast<std::size_t>(src));
                for (std::size_t c = 0; c < cin; ++c) acc += w(o, c * kernel + tap) * xs[c];
            }
            out(t, o) = acc;
        }
    }
    return out;
}

/// Accumulates dW, db and returns dx for conv1d.
inline RealSeq conv1d_backward(const Matrix& w, std::size_t kernel, const RealSeq& x, const RealSeq& gOut, Matrix& dW,
                               std::vector<double>& db)
{
    const std::size_t len = x.rows();
    const std::size_t cin = x.cols();
    const std::size_t cout = w.rows();
    const auto pad = static_cast<std::ptrdiff_t>(kernel / 2);
    RealSeq dx(len, cin);
    for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t o = 0; o < cout; ++o) {
            const double g = gOut(t, o);
            db[o] += g;
            for (std::size_t tap = 0; tap < kernel; ++tap) {
                const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + tap) - pad;
                if (src < 0 || src >= static_cast<std::ptrdiff_t>(len)) continue;
                const auto s = static_cast<std::size_t>(src);
                for (std::size_t c = 0; c < cin; ++c) {
                    dW(o, c * kernel + tap) += g * x(s, c);
                    dx(s, c) += g * w(o, c * kernel + tap);
                }
            }
        }
    }
    return dx;
}

struct LayerNormCache {
    RealSeq xhat;
    std::vector<double> rstd;  // per time step
};

inline RealSeq layer_norm(const RealSeq& x, const std::vector<double>& gamma, const std::vector<double>& beta,
                          LayerNormCache* cache)
{
    const std::size_t len = x.rows();
    const std::size_t d = x.cols();
    RealSeq out(len, d);
    LayerNormCache c{RealSeq(len, d), std::vector<double>(len)};
    for (std::size_t t = 0; t < len; ++t) {
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x(t, j);
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x(t, j) - mu) * (x(t, j) - mu);
        var /= static_cast<double>(d);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
        c.rstd[t] = rstd;
        for (std::size_t j = 0; j < d; ++j) {
            const double xh = (x(t, j) - mu) * rstd;
            c.xhat(t, j) = xh;
            out(t, j) = gamma[j] * xh + beta[j];
        }
    }
    if (cache != nullptr) *cache = std::move(c);
    return out;
}

inline RealSeq layer_norm_backward(const LayerNormCache& c, const std::vector<double>& gamma, const RealSeq& gOut,
                                   std::vector<double>& dGamma, std::vector<double>& dBeta)
{
    const std::size_t len = gOut.rows();
    const std::size_t d = gOut.cols();
    RealSeq dx(len, d);
    std::vector<double> dxh(d);
    for (std::size_t t = 0; t < len; ++t) {
        double sum = 0.0;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double g = gOut(t, j);
            dGamma[j] += g * c.xhat(t, j);
            dBeta[j] += g;
            dxh[j] = g * gamma[j];
            sum += dxh[j];
            dot += dxh[j] * c.xhat(t, j);
        }
        const double inv = 1.0 / static_cast<double>(d);
        for (std::size_t j = 0; j < d; ++j) {
            dx(t, j) = c.rstd[t] * (dxh[j] - sum * inv - c.xhat(t, j) * dot * inv);
        }
    }
    return dx;
}

struct CrossEntropy {
    double loss;
    std::vector<double> grad;  // softmax - onehot
};

inline CrossEntropy cross_entropy(const std::vector<double>& logits, int label)
{
    require(label >= 0 && static_cast<std::size_t>(label) < logits.size(), "cross_entropy: label out of range");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double z : logits) sum += std::exp(z - mx);
    const double lse = mx + std::log(sum);
    CrossEntropy ce{lse - logits[static_cast<std::size_t>(label)], std::vector<double>(logits.size())};
    for (std::size_t i = 0; i < logits.size(); ++i) ce.grad[i] = std::exp(logits[i] - lse);
    ce.grad[static_cast<std::size_t>(label)] -= 1.0;
    return ce;
}

// ---------------------------------------------------------------------------
// Batched forward / backward.

struct ForwardOptions {
    Mode mode{Mode::eval};
    bool dropout{true};  // only effective in train mode
    ssm::ScanPath path{ssm::ScanPath::parallel};
    unsigned workers{1};
};

struct BlockCache {
    LayerNormCache ln;
    AnyLayerCache ssm;
};

struct SampleCache {
    RealSeq x;
    RealSeq bnHat;    // normalized conv output
    RealSeq preAct;   // BN affine output (pre-ReLU)
    RealSeq dropMask;  // 0 or 1/(1-p); empty when dropout is inactive
    std::vector<BlockCache> blocks;
    RealSeq hidden;   // residual stream after the last block
};

struct BatchForward {
    std::vector<std::vector<double>> logits;
    std::vector<SampleCache> samples;
    std::vector<double> bnRstd;      // per channel, statistics used
    std::vector<double> newBnMean;   // running statistics after this batch (train mode)
    std::vector<double> newBnVar;
    Mode mode{Mode::eval};
};

inline BatchForward model_forward(const ModelParams& p, const std::vector<const RealSeq*>& xs,
                                  const ForwardOptions& fo, Rng* dropoutRng = nullptr)
{
    const ModelConfig& cfg = p.cfg;
    require(!xs.empty(), "model_forward: empty batch");
    const std::size_t d = cfg.dModel;
    const std::size_t bsz = xs.size();
    BatchForward bf;
    bf.mode = fo.mode;
    bf.samples.resize(bsz);

    std::vector<RealSeq> conv(bsz);
    for (std::size_t b = 0; b < bsz; ++b) {
        require_sequence(*xs[b], "model_forward");
        require(xs[b]->cols() == cfg.inChannels, "model_forward: input channels mismatch");
        conv[b] = conv1d(p.convW, p.convB, cfg.kernel, *xs[b]);
        bf.samples[b].x = *xs[b];
    }

    std::vector<double> mean(d, 0.0);
    std::vector<double> var(d, 0.0);
    bf.newBnMean = p.bnMean;
    bf.newBnVar = p.bnVar;
    if (fo.mode == Mode::train) {
        double count = 0.0;
        for (const auto& c : conv) {
            for (std::size_t t = 0; t < c.rows(); ++t) {
                for (std::size_t j = 0; j < d; ++j) mean[j] += c(t, j);
            }
            count += static_cast<double>(c.rows());
        }
        for (double& m : mean) m /= count;
        for (const auto& c : conv) {
            for (std::size_t t = 0; t < c.rows(); ++t) {
                for (std::size_t j = 0; j < d; ++j) var[j] += (c(t, j) - mean[j]) * (c(t, j) - mean[j]);
            }
        }
        for (std::size_t j = 0; j < d; ++j) {
            const double unbiased = count > 1.0 ? var[j] / (count - 1.0) : var[j] / count;
            var[j] /= count;
            bf.newBnMean[j] = (1.0 - kBatchNormMomentum) * p.bnMean[j] + kBatchNormMomentum * mean[j];
            bf.newBnVar[j] = (1.0 - kBatchNormMomentum) * p.bnVar[j] + kBatchNormMomentum * unbiased;
        }
    } else {
        mean = p.bnMean;
        var = p.bnVar;
    }
    bf.bnRstd.resize(d);
    for (std::size_t j = 0; j < d; ++j) bf.bnRstd[j] = 1.0 / std::sqrt(var[j] + kBatchNormEps);

    const bool drop = fo.mode == Mode::train && fo.dropout && cfg.dropout > 0.0;
    require(!drop || dropoutRng != nullptr, "model_forward: dropout needs an rng");
    const ssm::LayerOptions lo{fo.path, cfg.exactZoh, fo.workers};

    for (std::size_t b = 0; b < bsz; ++b) {
        SampleCache& sc = bf.samples[b];
        const std::size_t len = conv[b].rows();
        sc.bnHat = RealSeq(len, d);
        sc.preAct = RealSeq(len, d);
        RealSeq h(len, d);
        if (drop) sc.dropMask = RealSeq(len, d);
        const double keepScale = 1.0 / (1.0 - cfg.dropout);
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t j = 0; j < d; ++j) {
                const double xh = (conv[b](t, j) - mean[j]) * bf.bnRstd[j];
                sc.bnHat(t, j) = xh;
                const double a = p.bnGamma[j] * xh + p.bnBeta[j];
                sc.preAct(t, j) = a;
                double v = a > 0.0 ? a : 0.0;
                if (drop) {
                    const double m = dropoutRng->uniform() < cfg.dropout ? 0.0 : keepScale;
                    sc.dropMask(t, j) = m;
                    v *= m;
                }
                h(t, j) = v;
            }
        }
        sc.blocks.resize(p.blocks.size());
        for (std::size_t i = 0; i < p.blocks.size(); ++i) {
            const BlockParams& bp = p.blocks[i];
            BlockCache& bc = sc.blocks[i];
            const RealSeq u = layer_norm(h, bp.lnGamma, bp.lnBeta, &bc.ln);
            const AnyCore core = make_core(cfg, bp.core);
            std::visit(
                [&](const auto& k) {
                    auto r = ssm::layer_forward(bp.ssm, k, u, lo);
                    for (std::size_t n = 0; n < h.size(); ++n) h.data()[n] += r.y.data()[n];
                    bc.ssm = std::move(r.cache);
                },
                core);
        }
        std::vector<double> pooled(d, 0.0);
        if (cfg.pooling == Pooling::mean) {
            for (std::size_t t = 0; t < len; ++t) {
                for (std::size_t j = 0; j < d; ++j) pooled[j] += h(t, j);
            }
            for (double& v : pooled) v /= static_cast<double>(len);
        } else {
            for (std::size_t j = 0; j < d; ++j) pooled[j] = h(len - 1, j);
        }
        std::vector<double> logits(cfg.numClasses);
        for (std::size_t c = 0; c < cfg.numClasses; ++c) {
            double acc = p.headB[c];
            for (std::size_t j = 0; j < d; ++j) acc += p.headW(c, j) * pooled[j];
            logits[c] = acc;
        }
        sc.hidden = std::move(h);
        bf.logits.push_back(std::move(logits));
    }
    return bf;
}

struct BatchLoss {
    double loss{0.0};  // mean over the batch
    std::vector<std::vector<double>> gradLogits;
    std::size_t correct{0};
};

inline BatchLoss batch_loss(const BatchForward& bf, const std::vector<int>& labels)
{
    require(labels.size() == bf.logits.size(), "batch_loss: label count mismatch");
    BatchLoss bl;
    const double inv = 1.0 / static_cast<double>(labels.size());
    for (std::size_t b = 0; b < labels.size(); ++b) {
        auto ce = cross_entropy(bf.logits[b], labels[b]);
        bl.loss += ce.loss * inv;
        for (double& g : ce.grad) g *= inv;
        bl.gradLogits.push_back(std::move(ce.grad));
        const auto& z = bf.logits[b];
        if (static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin()) == labels[b]) ++bl.correct;
    }
    return bl;
}

struct BatchBackward {
    ModelParams grad;
    std::vector<double> lastLayerAdjointSq;  // per time step, summed over the batch
    std::vector<RealSeq> dx;
};

inline BatchBackward model_backward(const ModelParams& p, const BatchForward& bf,
                                    const std::vector<std::vector<double>>& gradLogits)
{
    const ModelConfig& cfg = p.cfg;
    const std::size_t d = cfg.dModel;
    const std::size_t bsz = bf.samples.size();
    require(gradLogits.size() == bsz, "model_backward: gradient count mismatch");
    BatchBackward out{zeros_like(p), {}, std::vector<RealSeq>(bsz)};
    ModelParams& g = out.grad;

    std::vector<RealSeq> dPre(bsz);
    for (std::size_t b = 0; b < bsz; ++b) {
        const SampleCache& sc = bf.samples[b];
        const std::size_t len = sc.hidden.rows();
        std::vector<double> dPooled(d, 0.0);
        for (std::size_t c = 0; c < cfg.numClasses; ++c) {
            const double gl = gradLogits[b][c];
            g.headB[c] += gl;
            for (std::size_t j = 0; j < d; ++j) dPooled[j] += gl * p.headW(c, j);
        }
        std::vector<double> pooled(d, 0.0);
        RealSeq dh(len, d);
        if (cfg.pooling == Pooling::mean) {
            const double inv = 1.0 / static_cast<double>(len);
            for (std::size_t t = 0; t < len; ++t) {
                for (std::size_t j = 0; j < d; ++j) {
                    pooled[j] += sc.hidden(t, j) * inv;
                    dh(t, j) = dPooled[j] * inv;
                }
            }
        } else {
            for (std::size_t j = 0; j < d; ++j) {
                pooled[j] = sc.hidden(len - 1, j);
                dh(len - 1, j) = dPooled[j];
            }
        }
        for (std::size_t c = 0; c < cfg.numClasses; ++c) {
            for (std::size_t j = 0; j < d; ++j) g.headW(c, j) += gradLogits[b][c] * pooled[j];
        }

        for (std::size_t i = p.blocks.size(); i-- > 0;) {
            const BlockParams& bp = p.blocks[i];
            BlockParams& gb = g.blocks[i];
            const BlockCache& bc = sc.blocks[i];
            const AnyCore core = make_core(cfg, bp.core);
            ssm::LayerGrad lg = std::visit(
                [&](const auto& k) {
                    using K = std::decay_t<decltype(k)>;
                    return ssm::layer_backward(bp.ssm, k, std::get<ssm::LayerCache<K>>(bc.ssm), dh);
                },
                core);
            ssm::accumulate(gb.ssm, lg.params);
            for (std::size_t n = 0; n < lg.core.size(); ++n) gb.core[n] += lg.core[n];
            if (i + 1 == p.blocks.size()) {
                if (out.lastLayerAdjointSq.empty()) out.lastLayerAdjointSq.assign(lg.adjointSq.size(), 0.0);
                for (std::size_t t = 0; t < lg.adjointSq.size(); ++t) out.lastLayerAdjointSq[t] += lg.adjointSq[t];
            }
            const RealSeq dIn = layer_norm_backward(bc.ln, bp.lnGamma, lg.x, gb.lnGamma, gb.lnBeta);
            for (std::size_t n = 0; n < dh.size(); ++n) dh.data()[n] += dIn.data()[n];
        }

        // dropout and ReLU
        RealSeq& dp = dPre[b];
        dp = RealSeq(len, d);
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t j = 0; j < d; ++j) {
                double v = dh(t, j);
                if (!sc.dropMask.data().empty()) v *= sc.dropMask(t, j);
                dp(t, j) = sc.preAct(t, j) > 0.0 ? v : 0.0;
            }
        }
    }

    // BatchNorm: dxhat = dy * gamma; in train mode the statistics depend on the batch.
    std::vector<double> sumDxh(d, 0.0);
    std::vector<double> sumDxhXh(d, 0.0);
    double count = 0.0;
    for (std::size_t b = 0; b < bsz; ++b) {
        const SampleCache& sc = bf.samples[b];
        for (std::size_t t = 0; t < sc.bnHat.rows(); ++t) {
            for (std::size_t j = 0; j < d; ++j) {
                const double dy = dPre[b](t, j);
                g.bnGamma[j] += dy * sc.bnHat(t, j);
                g.bnBeta[j] += dy;
                const double dxh = dy * p.bnGamma[j];
                sumDxh[j] += dxh;
                sumDxhXh[j] += dxh * sc.bnHat(t, j);
            }
        }
        count += static_cast<double>(sc.bnHat.rows());
    }
    for (std::size_t b = 0; b < bsz; ++b) {
        const SampleCache& sc = bf.samples[b];
        const std::size_t len = sc.bnHat.rows();
        RealSeq dConv(len, d);
        for (std::size_t t = 0; t < len; ++t) {
            for (std::size_t j = 0; j < d; ++j) {
                const double dxh = dPre[b](t, j) * p.bnGamma[j];
                if (bf.mode == Mode::train) {
                    dConv(t, j) = bf.bnRstd[j] * (dxh - sumDxh[j] / count - sc.bnHat(t, j) * sumDxhXh[j] / count);
                } else {
                    dConv(t, j) = bf.bnRstd[j] * dxh;
                }
            }
        }
        out.dx[b] = conv1d_backward(p.convW, cfg.kernel, sc.x, dConv, g.convW, g.convB);
    }
    return out;
}

}  // namespace mssm::har

#endif  // MSSM_HAR_MODEL_HPP
