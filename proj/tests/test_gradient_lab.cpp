#include <gtest/gtest.h>

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mssm/checks.hpp"
#include "mssm/gradient_lab.hpp"

using namespace mssm;
using namespace mssm::grad;

namespace {

std::vector<DiagVec> constant_abars(std::size_t steps, double a, std::size_t w = 1)
{
    return std::vector<DiagVec>(steps, DiagVec(w, a));
}

}  // namespace

TEST(Horizon, Validation)
{
    const auto ab = constant_abars(5, 0.5);
    EXPECT_THROW(vanilla_jacobian_product(ab, 3, 2), std::out_of_range);
    EXPECT_THROW(vanilla_jacobian_product(ab, 0, 5), std::out_of_range);
    EXPECT_NO_THROW(vanilla_jacobian_product(ab, 0, 4));
    EXPECT_THROW(momentum_jacobian_product(ab, 0.9, 4, 3), std::out_of_range);
}

TEST(Vanilla, EmptyProductIsOne)
{
    EXPECT_EQ(vanilla_jacobian_product(constant_abars(4, 0.3, 2), 2, 2), (DiagVec{1.0, 1.0}));
}

TEST(Vanilla, ExponentialDecay)
{
    // aBar = e^{-0.1} over 100 steps: e^{-10}.
    const auto ab = constant_abars(101, std::exp(-0.1));
    EXPECT_LE(rel_error(vanilla_jacobian_product(ab, 0, 100)[0], std::exp(-10.0)), 1e-12);
}

TEST(Vanilla, MonotoneInHorizon)
{
    Rng rng(1);
    std::vector<DiagVec> ab(200, DiagVec(3));
    for (auto& d : ab)
        for (double& v : d) v = rng.uniform(0.5, 1.0);
    DiagVec prev(3, 1.0);
    for (std::size_t T = 1; T < 200; ++T) {
        const auto cur = vanilla_jacobian_product(ab, 0, T);
        for (std::size_t i = 0; i < 3; ++i) EXPECT_LE(cur[i], prev[i]);
        prev = cur;
    }
}

TEST(Momentum, LowerRightIsBetaToTheHorizon)
{
    const auto ab = constant_abars(102, 0.5, 2);
    const auto jb = momentum_jacobian_product(ab, 0.99, 0, 101);
    EXPECT_EQ(jb.horizon, 101u);
    EXPECT_NEAR(jb.lowerRight, 0.3623720, 1e-7);
    EXPECT_LE(jb.oracleError, 1e-12);
}

TEST(Momentum, BlocksMatchDenseProduct)
{
    Rng rng(2);
    std::vector<DiagVec> ab(30, DiagVec(3));
    for (auto& d : ab)
        for (double& v : d) v = rng.uniform(0.0, 1.0);
    const auto jb = momentum_jacobian_product(ab, 0.8, 4, 25);
    const Matrix dense = dense_momentum_product(ab, 0.8, 4, 25);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(dense(i, i), jb.upperLeft[i], 1e-14);
        EXPECT_NEAR(dense(i, 3 + i), jb.upperRight[i], 1e-12);
        EXPECT_NEAR(dense(3 + i, 3 + i), jb.lowerRight, 1e-14);
        EXPECT_EQ(dense(3 + i, i), 0.0);
    }
}

TEST(Momentum, UpperRightHandValue)
{
    // One step, aBar = 0.5, beta = 0.9: [[0.5, 0.9], [0, 0.9]].
    const auto jb = momentum_jacobian_product(constant_abars(2, 0.5), 0.9, 0, 1);
    EXPECT_DOUBLE_EQ(jb.upperLeft[0], 0.5);
    EXPECT_DOUBLE_EQ(jb.upperRight[0], 0.9);
    EXPECT_DOUBLE_EQ(jb.lowerRight, 0.9);
}

TEST(Checks, JacobianSuitePasses)
{
    const auto j = checks::jacobian(5);
    for (const auto* r : {&j.vanillaClosedForm, &j.vanillaMonotone, &j.denseOracle, &j.lowerRight, &j.semigroup})
        EXPECT_TRUE(r->passed) << r->name << " " << r->worst;
}

TEST(FiniteDiff, QuadraticIsExact)
{
    const ScalarFn f = [](const std::vector<double>& v) { return 3.0 * v[0] * v[0] + v[0] * v[1]; };
    const auto g = finite_diff_oracle(f, {1.0, 2.0}, 1e-3);
    EXPECT_NEAR(g[0], 8.0, 1e-9);
    EXPECT_NEAR(g[1], 1.0, 1e-9);
    EXPECT_THROW(finite_diff_oracle(f, {1.0}, 0.0), ContractError);
}

TEST(FiniteDiff, NonFiniteValueNamesCoordinate)
{
    const ScalarFn f = [](const std::vector<double>& v) { return std::log(v[1]); };
    try {
        (void)finite_diff_oracle(f, {1.0, 0.0}, 1e-3);
        FAIL() << "expected domain_error";
    } catch (const std::domain_error& e) {
        EXPECT_NE(std::string(e.what()).find("coordinate 0"), std::string::npos);
    }
}

TEST(FiniteDiff, CheckGradientFlagsWrongGradient)
{
    const ScalarFn f = [](const std::vector<double>& v) { return std::sin(v[0]) + v[1] * v[1]; };
    const auto ok = check_gradient(f, {0.3, 2.0}, {std::cos(0.3), 4.0});
    EXPECT_LE(ok.worstRel, 1e-8);
    EXPECT_EQ(ok.checked, 2u);
    const auto bad = check_gradient(f, {0.3, 2.0}, {std::cos(0.3), 4.4});
    EXPECT_EQ(bad.worstIndex, 1u);
    EXPECT_NEAR(bad.worstRel, 0.4 / 4.4, 1e-6);
    const auto floored = check_gradient(f, {0.0, 0.0}, {1.0, 0.0});
    EXPECT_EQ(floored.checked, 1u);
}

TEST(Report, CsvLayoutAndRatio)
{
    GradientReport r{"x", Matrix(3, 2)};
    r.norms(0, 1) = 1e-6;
    r.norms(2, 1) = 1.0;
    r.norms(0, 0) = 0.5;
    std::ostringstream out;
    write_report_csv(out, r);
    const std::string s = out.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "t,epoch_0,epoch_1");
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
    EXPECT_DOUBLE_EQ(first_last_ratio(r), 1e-6);
    EXPECT_THROW(first_last_ratio(GradientReport{"", Matrix(0, 0)}), ContractError);
}

TEST(Heatmap, ZeroEpochsGivesInitialColumnOnly)
{
    HeatmapSpec spec;
    spec.model.dModel = 4;
    spec.model.dState = 3;
    spec.model.nLayers = 1;
    spec.model.numClasses = 2;
    spec.model.pooling = har::Pooling::last;
    spec.task = {16, 8, 2, 8, 1.0, 2.0};
    spec.valCount = 4;
    spec.probe = 4;
    spec.train.batch = 4;
    Rng rng(3);
    const auto rep = gradient_heatmap(spec, 0, rng);
    EXPECT_EQ(rep.norms.rows(), 16u);
    EXPECT_EQ(rep.norms.cols(), 1u);
    for (std::size_t t = 0; t < 16; ++t) {
        EXPECT_TRUE(std::isfinite(rep.norms(t, 0)));
        EXPECT_GE(rep.norms(t, 0), 0.0);
    }
    EXPECT_GT(rep.norms(15, 0), 0.0);
}

TEST(Heatmap, VanillaGradientVanishesMomentumDoesNot)
{
    // Small instance of the gradient-flow experiment: a long horizon with
    // fast decay makes the vanilla adjoint tiny at t = 0.
    HeatmapSpec spec;
    spec.model.dModel = 4;
    spec.model.dState = 4;
    spec.model.nLayers = 1;
    spec.model.numClasses = 2;
    spec.model.pooling = har::Pooling::last;
    spec.model.dropout = 0.0;
    spec.model.dtMin = 0.5;
    spec.model.dtMax = 1.0;
    spec.model.beta = 0.99;
    spec.model.variant = har::Variant::vanilla;
    spec.task = {64, 63, 2, 8, 1.0, 2.0};
    spec.valCount = 4;
    spec.probe = 4;
    spec.train.batch = 4;
    Rng r1(4);
    const auto vanilla = gradient_heatmap(spec, 0, r1);
    spec.model.variant = har::Variant::momentum;
    Rng r2(4);
    const auto momentum = gradient_heatmap(spec, 0, r2);
    EXPECT_LT(first_last_ratio(vanilla), 1e-6);
    EXPECT_GT(first_last_ratio(momentum), 1e-2);
}

TEST(ModelGradient, AllVariantsMatchFiniteDifferences)
{
    for (const auto v : {har::Variant::vanilla, har::Variant::momentum, har::Variant::complex, har::Variant::adam}) {
        const auto gc = check_model_gradient(v, 1);
        EXPECT_LE(gc.worstRel, 1e-4) << har::variant_name(v) << " index " << gc.worstIndex;
        EXPECT_GT(gc.checked, 50u);
    }
}
