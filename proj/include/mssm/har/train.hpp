#ifndef MSSM_HAR_TRAIN_HPP
#define MSSM_HAR_TRAIN_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "../numkit.hpp"
#include "data.hpp"
#include "model.hpp"

namespace mssm::har {

struct TrainConfig {
    double lr{1e-3};
    double weightDecay{1e-4};
    std::size_t batch{16};
    std::size_t maxEpochs{50};
    std::size_t patience{10};
    double clipNorm{1.0};
    std::uint64_t seed{0};
    ssm::ScanPath path{ssm::ScanPath::parallel};

    void validate() const
    {
        require(lr >= 0.0 && weightDecay >= 0.0, "TrainConfig: lr and weight decay must be >= 0");
        require(batch >= 1, "TrainConfig: batch must be >= 1");
        require(patience >= 1, "TrainConfig: patience must be >= 1");
        require(clipNorm > 0.0, "TrainConfig: clip norm must be positive");
    }
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t epoch, std::size_t step)
        : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step)),
          epoch_(epoch), step_(step)
    {
    }
    [[nodiscard]] std::size_t epoch() const { return epoch_; }
    [[nodiscard]] std::size_t step() const { return step_; }

private:
    std::size_t epoch_;
    std::size_t step_;
};

/// lr * (1 + cos(pi * epoch / maxEpochs)) / 2
inline double cosine_lr(double lr, std::size_t epoch, std::size_t maxEpochs)
{
    if (maxEpochs == 0) return lr;
    return lr * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(epoch) / static_cast<double>(maxEpochs)));
}

/// Scales g in place so that ||g||_2 <= maxNorm; returns the norm before clipping.
inline double clip_global_norm(std::vector<double>& g, double maxNorm)
{
    double sq = 0.0;
    for (double v : g) sq += v * v;
    const double norm = std::sqrt(sq);
    if (norm > maxNorm) {
        const double s = maxNorm / norm;
        for (double& v : g) v *= s;
    }
    return norm;
}

/// Standard Adam (bias-corrected) with L2-coupled weight decay.
class AdamOptimizer {
public:
    AdamOptimizer(std::size_t n, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : m_(n, 0.0), v_(n, 0.0), beta1_(beta1), beta2_(beta2), eps_(eps)
    {
    }

    /// mask[i] == 0 freezes coordinate i.
    void step(std::vector<double>& params, std::vector<double> grad, double lr, double weightDecay,
              const std::vector<char>& mask)
    {
        require(params.size() == m_.size() && grad.size() == m_.size() && mask.size() == m_.size(),
                "AdamOptimizer: size mismatch");
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (mask[i] == 0) continue;
            const double g = grad[i] + weightDecay * params[i];
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
            params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
        }
    }

    [[nodiscard]] std::size_t steps() const { return t_; }

private:
    std::vector<double> m_;
    std::vector<double> v_;
    double beta1_;
    double beta2_;
    double eps_;
    std::size_t t_{0};
};

/// 1 for trainable coordinates, 0 for coordinates of tensors named in `frozen`.
inline std::vector<char> trainable_mask(const ModelParams& p, const std::set<std::string>& frozen)
{
    std::vector<char> mask;
    for (const auto& slot : tensor_slots(p)) mask.insert(mask.end(), slot.size, frozen.count(slot.name) ? 0 : 1);
    return mask;
}

struct Evaluation {
    double loss{0.0};
    double accuracy{0.0};
};

inline Evaluation evaluate(const ModelParams& p, const Dataset& ds, std::size_t batch,
                           ssm::ScanPath path = ssm::ScanPath::parallel)
{
    require(ds.size() > 0, "evaluate: empty dataset");
    Evaluation ev;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        const std::size_t end = std::min(ds.size(), start + batch);
        std::vector<const RealSeq*> xs;
        std::vector<int> ys;
        for (std::size_t i = start; i < end; ++i) {
            xs.push_back(&ds.x[i]);
            ys.push_back(ds.y[i]);
        }
        const auto bf = model_forward(p, xs, {Mode::eval, false, path});
        const auto bl = batch_loss(bf, ys);
        ev.loss += bl.loss * static_cast<double>(end - start);
        correct += bl.correct;
    }
    ev.loss /= static_cast<double>(ds.size());
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
    return ev;
}

struct EpochMetrics {
    std::size_t epoch{0};
    double trainLoss{0.0};
    double valLoss{0.0};
    double valAcc{0.0};
    double lr{0.0};
};

inline void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& h)
{
    const auto prec = out.precision(17);
    out << "epoch,train_loss,val_loss,val_acc,lr\n";
    for (const auto& m : h) out << m.epoch << ',' << m.trainLoss << ',' << m.valLoss << ',' << m.valAcc << ',' << m.lr << "\n";
    out.precision(prec);
}

struct TrainResult {
    ModelParams params;  // parameters of the best-validation epoch
    std::vector<EpochMetrics> history;
    std::size_t bestEpoch{0};  // 1-based; 0 means the initialization
    double bestValLoss{std::numeric_limits<double>::infinity()};
    bool stoppedEarly{false};
};

struct TrainHooks {
    /// Called with the current parameters before training (epoch 0) and after every epoch.
    std::function<void(std::size_t epoch, const ModelParams&)> onEpoch;
};

inline TrainResult train(const ModelParams& init, const Dataset& trainSet, const Dataset& valSet,
                         const TrainConfig& tc, const std::set<std::string>& frozen = {}, const TrainHooks& hooks = {})
{
    tc.validate();
    require(trainSet.size() > 0 && valSet.size() > 0, "train: empty split");
    TrainResult res;
    res.params = init;
    if (hooks.onEpoch) hooks.onEpoch(0, init);
    if (tc.maxEpochs == 0) return res;

    ModelParams cur = init;
    std::vector<double> flat = flatten(cur);
    const std::vector<char> mask = trainable_mask(cur, frozen);
    AdamOptimizer opt(flat.size());
    Rng rng(tc.seed);
    Rng dropRng = rng.split();
    std::vector<std::size_t> order(trainSet.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t wait = 0;
    std::size_t step = 0;

    for (std::size_t epoch = 0; epoch < tc.maxEpochs; ++epoch) {
        const double lr = cosine_lr(tc.lr, epoch, tc.maxEpochs);
        rng.shuffle(order);
        double lossSum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += tc.batch) {
            const std::size_t end = std::min(order.size(), start + tc.batch);
            std::vector<const RealSeq*> xs;
            std::vector<int> ys;
            for (std::size_t i = start; i < end; ++i) {
                xs.push_back(&trainSet.x[order[i]]);
                ys.push_back(trainSet.y[order[i]]);
            }
            ++step;
            BatchForward bf;
            try {
                bf = model_forward(cur, xs, {Mode::train, true, tc.path}, &dropRng);
            } catch (const ContractError&) {
                // Updated parameters can degenerate (e.g. a step size underflowing to 0).
                if (step == 1) throw;
                throw DivergenceError(epoch + 1, step);
            }
            const auto bl = batch_loss(bf, ys);
            if (!std::isfinite(bl.loss)) throw DivergenceError(epoch + 1, step);
            auto bb = model_backward(cur, bf, bl.gradLogits);
            std::vector<double> g = flatten(bb.grad);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (mask[i] == 0) g[i] = 0.0;
            }
            clip_global_norm(g, tc.clipNorm);
            opt.step(flat, std::move(g), lr, tc.weightDecay, mask);
            for (std::size_t i = 0; i < flat.size(); ++i) {
                // frozen entries may legitimately be infinite (beta = 0 is logit -inf)
                if (mask[i] != 0 && !std::isfinite(flat[i])) throw DivergenceError(epoch + 1, step);
            }
            unflatten(cur, flat);
            cur.bnMean = bf.newBnMean;
            cur.bnVar = bf.newBnVar;
            lossSum += bl.loss * static_cast<double>(end - start);
        }
        Evaluation ev;
        try {
            ev = evaluate(cur, valSet, tc.batch, tc.path);
        } catch (const ContractError&) {
            throw DivergenceError(epoch + 1, step);
        }
        if (!std::isfinite(ev.loss)) throw DivergenceError(epoch + 1, step);
        res.history.push_back({epoch + 1, lossSum / static_cast<double>(order.size()), ev.loss, ev.accuracy, lr});
        if (hooks.onEpoch) hooks.onEpoch(epoch + 1, cur);
        if (ev.loss < res.bestValLoss) {
            res.bestValLoss = ev.loss;
            res.bestEpoch = epoch + 1;
            res.params = cur;
            wait = 0;
        } else if (++wait >= tc.patience) {
            res.stoppedEarly = true;
            break;
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Momentum hyperparameter grid.

struct GridResult {
    std::vector<double> betas;
    std::vector<double> alphas;
    Matrix accuracy;  // betas x alphas, NaN for diverged cells
};

inline std::vector<std::string> core_tensor_names(const ModelParams& p)
{
    std::vector<std::string> out;
    for (std::size_t i = 0; i < p.blocks.size(); ++i) out.push_back("blocks." + std::to_string(i) + ".core");
    return out;
}

/// One momentum model per (beta, alpha) cell with the momentum parameters frozen;
/// every cell starts from the same initialization. Cells hold best-epoch validation accuracy.
inline GridResult grid_search(const std::vector<double>& betas, const std::vector<double>& alphas,
                              const Dataset& trainSet, const Dataset& valSet, ModelConfig mc, const TrainConfig& tc,
                              std::uint64_t initSeed)
{
    require(!betas.empty() && !alphas.empty(), "grid_search: grids must be nonempty");
    for (double b : betas) require(b >= 0.0 && b < 1.0, "grid_search: beta must lie in [0, 1)");
    mc.variant = Variant::momentum;
    Rng initRng(initSeed);
    const ModelParams base = init_model(mc, initRng);
    const auto frozenNames = core_tensor_names(base);
    const std::set<std::string> frozen(frozenNames.begin(), frozenNames.end());
    GridResult gr{betas, alphas, Matrix(betas.size(), alphas.size())};
    for (std::size_t i = 0; i < betas.size(); ++i) {
        for (std::size_t j = 0; j < alphas.size(); ++j) {
            ModelParams p = base;
            // logit(0) = -inf maps back to beta = 0 exactly through the sigmoid.
            for (auto& b : p.blocks) b.core = {alphas[j], logit(betas[i])};
            try {
                const TrainResult tr = train(p, trainSet, valSet, tc, frozen);
                gr.accuracy(i, j) = evaluate(tr.params, valSet, tc.batch, tc.path).accuracy;
            } catch (const DivergenceError&) {
                gr.accuracy(i, j) = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    return gr;
}

inline void write_grid_csv(std::ostream& out, const GridResult& g)
{
    out << "beta";
    for (double a : g.alphas) out << ",alpha_" << shortest(a);
    out << "\n";
    const auto prec = out.precision(17);
    for (std::size_t i = 0; i < g.betas.size(); ++i) {
        out << shortest(g.betas[i]);
        for (std::size_t j = 0; j < g.alphas.size(); ++j) {
            const double v = g.accuracy(i, j);
            if (std::isnan(v)) {
                out << ",nan";
            } else {
                out << ',' << v;
            }
        }
        out << "\n";
    }
    out.precision(prec);
}

}  // namespace mssm::har

#endif  // MSSM_HAR_TRAIN_HPP
