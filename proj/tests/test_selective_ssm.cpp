#include <gtest/gtest.h>

#include <cmath>

#include "layer_fd.hpp"
#include "mssm/selective_ssm.hpp"

using namespace mssm;
using namespace mssm::ssm;
using mssm::testing::random_seq;

TEST(Projections, ZeroInput)
{
    Rng rng(1);
    const auto p = init_selective(3, 4, rng);
    const auto pr = selective_projections(p, std::vector<double>(3, 0.0));
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(pr.b[j], 0.0);
        EXPECT_EQ(pr.c[j], 0.0);
    }
    for (std::size_t d = 0; d < 3; ++d) EXPECT_DOUBLE_EQ(pr.delta[d], softplus(p.thetaDelta[d]));
}

TEST(Projections, ZeroBiasGivesLn2AndIdentityProjection)
{
    SelectiveParams p(3, 3);
    for (std::size_t i = 0; i < 3; ++i) p.wB(i, i) = 1.0;
    const auto pr = selective_projections(p, std::vector<double>{0.0, 1.0, 0.0});
    for (double d : pr.delta) EXPECT_DOUBLE_EQ(d, std::log(2.0));
    EXPECT_EQ(pr.b, (std::vector<double>{0.0, 1.0, 0.0}));
    EXPECT_THROW(selective_projections(p, std::vector<double>{0.0, 1.0}), ContractError);
}

TEST(Zoh, ClosedForms)
{
    EXPECT_DOUBLE_EQ(discretize_zoh(-2.0, 0.1, false).aBar, 0.8187307530779818);
    EXPECT_DOUBLE_EQ(discretize_zoh(-2.0, 0.1, false).bScale, 0.1);
    const double exact = discretize_zoh(-2.0, 0.1, true).bScale;
    EXPECT_NEAR(exact, 0.0906346234, 1e-10);
    EXPECT_NEAR((0.1 - exact) / 0.1, 0.094, 1e-3);
    EXPECT_THROW(discretize_zoh(0.0, 0.1, false), ContractError);
    EXPECT_THROW(discretize_zoh(-1.0, 0.0, false), ContractError);
}

TEST(Zoh, ExactAndApproximateAgreeToFirstOrder)
{
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const double a = -std::exp(rng.uniform(-3.0, 3.0));
        const double delta = rng.uniform(1e-6, 0.1) / -a;  // |delta a| <= 0.1
        const double ex = discretize_zoh(a, delta, true).bScale;
        const double ap = discretize_zoh(a, delta, false).bScale;
        EXPECT_LE(std::abs(ex - ap) / ap, 0.5 * std::abs(delta * a));
    }
}

TEST(Init, StrictlyNegativeSpectrumAndStepRange)
{
    Rng rng(3);
    const auto p = init_selective(5, 6, rng, {1e-3, 1e-1, 1.0});
    for (std::size_t d = 0; d < 5; ++d) {
        for (std::size_t j = 0; j < 6; ++j) EXPECT_DOUBLE_EQ(p.a(d, j), -static_cast<double>(j + 1));
        const double dt = softplus(p.thetaDelta[d]);
        EXPECT_GE(dt, 1e-3 * (1 - 1e-12));
        EXPECT_LE(dt, 1e-1 * (1 + 1e-12));
        EXPECT_EQ(p.skip[d], 1.0);
    }
}

TEST(Forward, ZeroInputGivesZeroOutput)
{
    Rng rng(4);
    const auto p = init_selective(3, 4, rng);
    const auto f = ssm_forward(p, RealSeq(10, 3));
    for (double v : f.y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, HandRecurrenceWithFrozenProjections)
{
    SelectiveParams p(1, 1);
    p.aLog(0, 0) = 0.0;  // a = -1
    RealSeq x(2, 1);
    x(0, 0) = 1.0;
    const Matrix delta(2, 1, 1.0);
    const Matrix b(2, 1, 1.0);
    const Matrix c(2, 1, 1.0);
    const auto r = layer_forward_from_drives(p, VanillaCore{}, x, frozen_drives(p, x, delta, b, c));
    EXPECT_DOUBLE_EQ(r.cache.core.readout[0], 1.0);
    EXPECT_DOUBLE_EQ(r.cache.core.readout[1], std::exp(-1.0));
    EXPECT_DOUBLE_EQ(r.y(0, 0), 1.0);
    EXPECT_NEAR(r.y(1, 0), 0.36787944, 1e-8);
}

TEST(Forward, ParallelMatchesSequential)
{
    Rng rng(5);
    for (const bool exact : {false, true}) {
        const auto p = init_selective(4, 8, rng, {0.01, 0.5, 1.0});
        const RealSeq x = random_seq(rng, 300, 4);
        const auto a = ssm_forward(p, x, {ScanPath::parallel, exact});
        const auto b = ssm_forward(p, x, {ScanPath::sequential, exact});
        EXPECT_LE(scan::worst_violation(a.y.data(), b.y.data(), 1e-9, 1e-12), 1.0);
        EXPECT_EQ(a.hidden.size(), 300u * 4 * 8);
    }
}

TEST(Forward, DecayFactorsInOpenUnitInterval)
{
    Rng rng(6);
    const auto p = init_selective(4, 8, rng);
    const auto ds = compute_drives(p, random_seq(rng, 64, 4));
    for (double a : ds.aBar) {
        EXPECT_GT(a, 0.0);
        EXPECT_LT(a, 1.0);
    }
}

TEST(Forward, LinearWhenFrozenNonlinearWhenSelective)
{
    Rng rng(7);
    const auto p = init_selective(3, 5, rng, {0.05, 0.5, 1.0});
    const std::size_t len = 40;
    const RealSeq x1 = random_seq(rng, len, 3);
    const RealSeq x2 = random_seq(rng, len, 3);
    RealSeq sum(len, 3);
    for (std::size_t i = 0; i < sum.size(); ++i) sum.data()[i] = x1.data()[i] + x2.data()[i];
    Matrix delta(len, 3);
    Matrix b(len, 5);
    Matrix c(len, 5);
    for (double& v : delta.data()) v = rng.uniform(0.05, 0.5);
    for (double& v : b.data()) v = rng.normal();
    for (double& v : c.data()) v = rng.normal();
    auto frozen = [&](const RealSeq& x) {
        return layer_forward_from_drives(p, VanillaCore{}, x, frozen_drives(p, x, delta, b, c)).y;
    };
    const RealSeq f1 = frozen(x1);
    const RealSeq f2 = frozen(x2);
    const RealSeq fs = frozen(sum);
    double worst = 0.0;
    for (std::size_t i = 0; i < fs.size(); ++i) worst = std::max(worst, std::abs(fs.data()[i] - f1.data()[i] - f2.data()[i]));
    EXPECT_LE(worst, 1e-10);

    const RealSeq s1 = ssm_forward(p, x1).y;
    const RealSeq s2 = ssm_forward(p, x2).y;
    const RealSeq ss = ssm_forward(p, sum).y;
    double gap = 0.0;
    for (std::size_t i = 0; i < ss.size(); ++i) gap = std::max(gap, std::abs(ss.data()[i] - s1.data()[i] - s2.data()[i]));
    EXPECT_GT(gap, 1e-3);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients)
{
    Rng rng(8);
    const auto p = init_selective(3, 4, rng);
    const auto f = ssm_forward(p, random_seq(rng, 12, 3));
    const auto g = ssm_backward(p, f, RealSeq(12, 3));
    for (double v : mssm::testing::flatten(g.params)) EXPECT_EQ(v, 0.0);
    for (double v : g.x.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, SingleStepReadoutGradientIsOuterProduct)
{
    Rng rng(9);
    const auto p = init_selective(3, 4, rng);
    const RealSeq x = random_seq(rng, 1, 3);
    const auto f = ssm_forward(p, x);
    const RealSeq gY = random_seq(rng, 1, 3);
    const auto g = ssm_backward(p, f, gY);
    // dL/dC_j = sum_d gY_d h_{d,j}; C_j = sum_d wC(j,d) x_d, so dL/dwC(j,d) = dL/dC_j * x_d.
    for (std::size_t j = 0; j < 4; ++j) {
        double dC = 0.0;
        for (std::size_t d = 0; d < 3; ++d) dC += gY(0, d) * f.hidden[d * 4 + j];
        for (std::size_t d = 0; d < 3; ++d) EXPECT_NEAR(g.params.wC(j, d), dC * x(0, d), 1e-14);
    }
}

TEST(Backward, ShapeMismatchIsContractError)
{
    Rng rng(10);
    const auto p = init_selective(3, 4, rng);
    const auto f = ssm_forward(p, random_seq(rng, 12, 3));
    EXPECT_THROW(ssm_backward(p, f, RealSeq(11, 3)), ContractError);
    const auto other = init_selective(3, 5, rng);
    EXPECT_THROW(ssm_backward(other, f, RealSeq(12, 3)), ContractError);
}

TEST(Backward, MatchesFiniteDifferencesD4N8L32)
{
    Rng rng(11);
    const auto p = init_selective(4, 8, rng, {0.05, 0.5, 1.0});
    const auto r = mssm::testing::layer_gradcheck(p, VanillaCore{}, random_seq(rng, 32, 4), random_seq(rng, 32, 4));
    EXPECT_LE(r.worstRel, 1e-4) << "index " << r.worstIndex;
    EXPECT_GT(r.checked, 100u);
}

TEST(Backward, MatchesFiniteDifferencesOverRandomInstances)
{
    Rng rng(12);
    for (int k = 0; k < 20; ++k) {
        const auto p = init_selective(3, 4, rng, {0.01, 1.0, rng.uniform(0.0, 1.0)});
        const bool exact = k % 2 == 1;
        const auto r = mssm::testing::layer_gradcheck(p, VanillaCore{}, random_seq(rng, 10, 3), random_seq(rng, 10, 3),
                                                      {ScanPath::parallel, exact});
        EXPECT_LE(r.worstRel, 1e-4) << "instance " << k << " exact=" << exact;
    }
}

TEST(Flops, CountedAndLinearInLength)
{
    Rng rng(13);
    const auto p = init_selective(4, 8, rng);
    FlopCounter a;
    FlopCounter b;
    (void)ssm_forward(p, random_seq(rng, 256, 4), {}, &a);
    (void)ssm_forward(p, random_seq(rng, 1024, 4), {}, &b);
    EXPECT_GT(a.flops, 0u);
    const double ratio = static_cast<double>(b.flops) / static_cast<double>(a.flops);
    EXPECT_GT(ratio, 3.5);
    EXPECT_LT(ratio, 4.5);
}
