#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "layer_fd.hpp"
#include "mssm/gradient_lab.hpp"
#include "mssm/har/model.hpp"

using namespace mssm;
using namespace mssm::har;
using mssm::testing::random_seq;

namespace {

ModelConfig small_config(Variant v = Variant::momentum)
{
    ModelConfig mc;
    mc.dModel = 6;
    mc.dState = 3;
    mc.nLayers = 2;
    mc.numClasses = 4;
    mc.variant = v;
    return mc;
}

/// Zeroes the readout and skip so every block adds nothing to the residual stream.
void bypass_backbone(ModelParams& p)
{
    for (auto& b : p.blocks) {
        std::fill(b.ssm.wC.data().begin(), b.ssm.wC.data().end(), 0.0);
        std::fill(b.ssm.skip.begin(), b.ssm.skip.end(), 0.0);
    }
}

}  // namespace

TEST(CrossEntropy, UniformLogits)
{
    const auto ce = cross_entropy(std::vector<double>(12, 0.7), 3);
    EXPECT_NEAR(ce.loss, 2.4849066, 1e-7);
    EXPECT_NEAR(ce.loss, std::log(12.0), 1e-14);
}

TEST(CrossEntropy, SaturatedAndGradientSum)
{
    std::vector<double> z(5, 0.0);
    z[2] = 50.0;
    EXPECT_LE(cross_entropy(z, 2).loss, 1e-20);
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
        for (double& v : z) v = 10.0 * rng.normal();
        const auto ce = cross_entropy(z, static_cast<int>(rng.below(5)));
        EXPECT_LE(std::abs(std::accumulate(ce.grad.begin(), ce.grad.end(), 0.0)), 1e-12);
        EXPECT_TRUE(std::isfinite(ce.loss));
    }
    EXPECT_THROW(cross_entropy(z, 5), ContractError);
    EXPECT_THROW(cross_entropy(z, -1), ContractError);
}

TEST(Conv, MatchesNaiveSlidingWindow)
{
    Rng rng(2);
    const std::size_t k = 3;
    Matrix w(4, 6 * k);
    for (double& v : w.data()) v = rng.normal();
    std::vector<double> b{0.1, -0.2, 0.3, 0.0};
    const RealSeq x = random_seq(rng, 8, 6);
    const RealSeq y = conv1d(w, b, k, x);
    for (std::size_t t = 0; t < 8; ++t) {
        for (std::size_t o = 0; o < 4; ++o) {
            double acc = b[o];
            for (int off = -1; off <= 1; ++off) {
                const int s = static_cast<int>(t) + off;
                if (s < 0 || s >= 8) continue;
                for (std::size_t c = 0; c < 6; ++c) acc += w(o, c * k + static_cast<std::size_t>(off + 1)) * x(s, c);
            }
            EXPECT_EQ(y(t, o), acc);
        }
    }
}

TEST(Conv, DeltaKernelIsIdentityAndZeroIsZero)
{
    Rng rng(3);
    Matrix w(6, 18);
    for (std::size_t c = 0; c < 6; ++c) w(c, c * 3 + 1) = 1.0;
    const RealSeq x = random_seq(rng, 10, 6);
    EXPECT_EQ(conv1d(w, std::vector<double>(6, 0.0), 3, x).data(), x.data());
    const RealSeq z = conv1d(w, std::vector<double>(6, 0.0), 3, RealSeq(10, 6));
    for (double v : z.data()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(conv1d(w, std::vector<double>(5, 0.0), 3, x), ContractError);
}

TEST(Conv, BackwardMatchesFiniteDifferences)
{
    Rng rng(4);
    Matrix w(3, 6 * 3);
    for (double& v : w.data()) v = rng.normal();
    std::vector<double> b(3, 0.0);
    const RealSeq x = random_seq(rng, 7, 6);
    const RealSeq gOut = random_seq(rng, 7, 3);
    Matrix dW(3, 18);
    std::vector<double> db(3, 0.0);
    const RealSeq dx = conv1d_backward(w, 3, x, gOut, dW, db);
    std::vector<double> point = x.data();
    const grad::ScalarFn f = [&](const std::vector<double>& v) {
        RealSeq xx(7, 6);
        xx.data() = v;
        const RealSeq y = conv1d(w, b, 3, xx);
        return std::inner_product(y.data().begin(), y.data().end(), gOut.data().begin(), 0.0);
    };
    EXPECT_LE(grad::check_gradient(f, point, dx.data()).worstRel, 1e-8);
    const grad::ScalarFn fw = [&](const std::vector<double>& v) {
        Matrix ww(3, 18);
        ww.data() = v;
        const RealSeq y = conv1d(ww, b, 3, x);
        return std::inner_product(y.data().begin(), y.data().end(), gOut.data().begin(), 0.0);
    };
    EXPECT_LE(grad::check_gradient(fw, w.data(), dW.data()).worstRel, 1e-8);
}

TEST(LayerNorm, NormalizesRowsAndBackwardMatches)
{
    Rng rng(5);
    const RealSeq x = random_seq(rng, 5, 8);
    const std::vector<double> gamma(8, 1.0);
    const std::vector<double> beta(8, 0.0);
    LayerNormCache c;
    const RealSeq y = layer_norm(x, gamma, beta, &c);
    for (std::size_t t = 0; t < 5; ++t) {
        double mu = 0.0;
        double sq = 0.0;
        for (std::size_t j = 0; j < 8; ++j) mu += y(t, j) / 8.0;
        for (std::size_t j = 0; j < 8; ++j) sq += (y(t, j) - mu) * (y(t, j) - mu) / 8.0;
        EXPECT_NEAR(mu, 0.0, 1e-12);
        EXPECT_NEAR(sq, 1.0, 1e-4);  // eps 1e-5 in the denominator
    }
    std::vector<double> g2(8);
    for (double& v : g2) v = rng.normal();
    const RealSeq gOut = random_seq(rng, 5, 8);
    std::vector<double> dG(8, 0.0);
    std::vector<double> dB(8, 0.0);
    const RealSeq dx = layer_norm_backward(c, g2, gOut, dG, dB);
    const grad::ScalarFn f = [&](const std::vector<double>& v) {
        RealSeq xx(5, 8);
        xx.data() = v;
        const RealSeq yy = layer_norm(xx, g2, beta, nullptr);
        return std::inner_product(yy.data().begin(), yy.data().end(), gOut.data().begin(), 0.0);
    };
    EXPECT_LE(grad::check_gradient(f, x.data(), dx.data()).worstRel, 1e-6);
}

TEST(Model, NamesRoundTrip)
{
    for (const auto v : {Variant::vanilla, Variant::momentum, Variant::complex, Variant::adam})
        EXPECT_EQ(parse_variant(variant_name(v)), v);
    EXPECT_EQ(parse_pooling(pooling_name(Pooling::last)), Pooling::last);
    EXPECT_THROW(parse_variant("lstm"), ContractError);
    EXPECT_THROW(parse_pooling("max"), ContractError);
}

TEST(Model, ConfigValidation)
{
    ModelConfig mc = small_config();
    mc.kernel = 2;
    Rng rng(6);
    EXPECT_THROW(init_model(mc, rng), ContractError);
    mc = small_config();
    mc.numClasses = 1;
    EXPECT_THROW(init_model(mc, rng), ContractError);
    mc = small_config();
    mc.dropout = 1.0;
    EXPECT_THROW(init_model(mc, rng), ContractError);
}

TEST(Model, FlattenRoundTripAndSlots)
{
    Rng rng(7);
    const ModelParams p = init_model(small_config(Variant::adam), rng);
    const auto flat = flatten(p);
    EXPECT_EQ(flat.size(), p.parameter_count());
    ModelParams q = zeros_like(p);
    for (double v : flatten(q)) EXPECT_EQ(v, 0.0);
    unflatten(q, flat);
    EXPECT_EQ(flatten(q), flat);
    EXPECT_THROW(unflatten(q, std::vector<double>(flat.size() + 1)), ContractError);
    const auto slots = tensor_slots(p);
    EXPECT_EQ(slots.front().name, "conv.weight");
    EXPECT_EQ(slots.back().name, "head.bias");
    EXPECT_EQ(slots.back().offset + slots.back().size, flat.size());
    EXPECT_EQ(p.blocks[0].core.size(), 3u);
}

TEST(Model, ZeroHeadGivesBias)
{
    Rng rng(8);
    ModelParams p = init_model(small_config(), rng);
    std::fill(p.headW.data().begin(), p.headW.data().end(), 0.0);
    p.headB = {0.5, -1.0, 2.0, 0.0};
    const RealSeq x = random_seq(rng, 12, 6);
    const auto bf = model_forward(p, {&x}, {});
    EXPECT_EQ(bf.logits[0], p.headB);
}

TEST(Model, ForwardIsBitReproducible)
{
    for (const auto v : {Variant::vanilla, Variant::momentum, Variant::complex, Variant::adam}) {
        Rng a(9);
        Rng b(9);
        const ModelParams pa = init_model(small_config(v), a);
        const ModelParams pb = init_model(small_config(v), b);
        const RealSeq x = random_seq(a, 20, 6);
        Rng da(1);
        Rng db(1);
        const auto fa = model_forward(pa, {&x}, {Mode::train}, &da);
        const auto fb = model_forward(pb, {&x}, {Mode::train}, &db);
        EXPECT_EQ(fa.logits, fb.logits) << variant_name(v);
    }
}

TEST(Model, MeanPoolPermutationInvariantWhenBypassed)
{
    Rng rng(10);
    ModelConfig mc = small_config();
    mc.kernel = 1;
    ModelParams p = init_model(mc, rng);
    bypass_backbone(p);
    const RealSeq x = random_seq(rng, 15, 6);
    RealSeq rev(15, 6);
    for (std::size_t t = 0; t < 15; ++t)
        for (std::size_t c = 0; c < 6; ++c) rev(t, c) = x(14 - t, c);
    const auto a = model_forward(p, {&x}, {});
    const auto b = model_forward(p, {&rev}, {});
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(a.logits[0][c], b.logits[0][c], 1e-12);
}

TEST(Model, ConstantHiddenPoolsToItself)
{
    Rng rng(11);
    ModelConfig mc = small_config();
    mc.kernel = 1;
    ModelParams p = init_model(mc, rng);
    bypass_backbone(p);
    RealSeq x(9, 6);
    for (std::size_t t = 0; t < 9; ++t)
        for (std::size_t c = 0; c < 6; ++c) x(t, c) = 0.3 * static_cast<double>(c) - 0.5;
    const auto mean = model_forward(p, {&x}, {});
    p.cfg.pooling = Pooling::last;
    const auto last = model_forward(p, {&x}, {});
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(mean.logits[0][c], last.logits[0][c], 1e-12);
}

TEST(BatchNorm, TrainUpdatesRunningStatsEvalUsesThem)
{
    Rng rng(12);
    const ModelParams p = init_model(small_config(), rng);
    const RealSeq x1 = random_seq(rng, 10, 6);
    const RealSeq x2 = random_seq(rng, 10, 6);
    const auto bf = model_forward(p, {&x1, &x2}, {Mode::train, false});
    const RealSeq c1 = conv1d(p.convW, p.convB, 3, x1);
    const RealSeq c2 = conv1d(p.convW, p.convB, 3, x2);
    for (std::size_t j = 0; j < 6; ++j) {
        double mu = 0.0;
        for (std::size_t t = 0; t < 10; ++t) mu += (c1(t, j) + c2(t, j)) / 20.0;
        double var = 0.0;
        for (std::size_t t = 0; t < 10; ++t) var += (c1(t, j) - mu) * (c1(t, j) - mu) + (c2(t, j) - mu) * (c2(t, j) - mu);
        EXPECT_NEAR(bf.newBnMean[j], 0.1 * mu, 1e-14);
        EXPECT_NEAR(bf.newBnVar[j], 0.9 + 0.1 * var / 19.0, 1e-14);
        EXPECT_NEAR(bf.bnRstd[j], 1.0 / std::sqrt(var / 20.0 + kBatchNormEps), 1e-12);
    }
    const auto ev = model_forward(p, {&x1}, {Mode::eval});
    EXPECT_EQ(ev.newBnMean, p.bnMean);
    for (double r : ev.bnRstd) EXPECT_DOUBLE_EQ(r, 1.0 / std::sqrt(1.0 + kBatchNormEps));
}

TEST(Dropout, InvertedScalingTrainOnly)
{
    Rng rng(13);
    ModelConfig mc = small_config();
    mc.dropout = 0.25;
    const ModelParams p = init_model(mc, rng);
    const RealSeq x = random_seq(rng, 40, 6);
    Rng dr(2);
    const auto bf = model_forward(p, {&x}, {Mode::train}, &dr);
    std::size_t zeros = 0;
    for (double m : bf.samples[0].dropMask.data()) {
        EXPECT_TRUE(m == 0.0 || m == 1.0 / 0.75);
        zeros += m == 0.0 ? 1 : 0;
    }
    EXPECT_GT(zeros, 20u);
    EXPECT_LT(zeros, 100u);
    EXPECT_THROW(model_forward(p, {&x}, {Mode::train}), ContractError);
    EXPECT_TRUE(model_forward(p, {&x}, {Mode::eval}).samples[0].dropMask.data().empty());
}

TEST(Gradients, LastPoolingMatchesFiniteDifferences)
{
    grad::ModelGradCheckSpec s;
    s.pooling = Pooling::last;
    for (const auto v : {Variant::vanilla, Variant::momentum}) {
        const auto gc = grad::check_model_gradient(v, 2, s);
        EXPECT_LE(gc.worstRel, 1e-4) << variant_name(v) << " index " << gc.worstIndex;
    }
}

TEST(Gradients, BatchLossAveragesAndCountsCorrect)
{
    BatchForward bf;
    bf.logits = {{2.0, 0.0}, {0.0, 2.0}};
    const auto bl = batch_loss(bf, {0, 0});
    EXPECT_EQ(bl.correct, 1u);
    EXPECT_NEAR(bl.loss, 0.5 * (cross_entropy(bf.logits[0], 0).loss + cross_entropy(bf.logits[1], 0).loss), 1e-15);
    EXPECT_NEAR(bl.gradLogits[0][0] + bl.gradLogits[0][1], 0.0, 1e-15);
    EXPECT_THROW(batch_loss(bf, {0}), ContractError);
}
