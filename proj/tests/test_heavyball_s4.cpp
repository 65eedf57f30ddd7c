#include <gtest/gtest.h>

#include <cmath>

#include "mssm/checks.hpp"
#include "mssm/heavyball_s4.hpp"

using namespace mssm;
using namespace mssm::heavyball;

namespace {

HeavyBallParams one_channel(double gamma, double a)
{
    HeavyBallParams p;
    p.gamma = gamma;
    p.aDiag = {a};
    p.B = {1.0};
    p.C = {1.0};
    return p;
}

HeavyBallParams random_params(Rng& rng, std::size_t n)
{
    HeavyBallParams p;
    p.gamma = rng.uniform(0.1, 3.0);
    for (std::size_t i = 0; i < n; ++i) {
        p.aDiag.push_back(rng.uniform(0.0, 5.0));
        p.B.push_back(rng.normal());
        p.C.push_back(rng.normal());
        p.bias.push_back(0.1 * rng.normal());
    }
    p.D = rng.normal();
    return p;
}

RealSeq random_input(Rng& rng, std::size_t len)
{
    RealSeq x(len, 1);
    for (double& v : x.data()) v = rng.normal();
    return x;
}

}  // namespace

TEST(Discretize, UnitExample)
{
    const auto d = discretize_implicit(one_channel(1.0, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(d.schur[0], 1.0 / 3.0);
    const auto& m = d.minv.blocks[0];
    EXPECT_DOUBLE_EQ(m.a, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.b, -1.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.c, 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(m.d, 2.0 / 3.0);
    EXPECT_LE(inverse_residual(step_matrix(1.0, 1.0, 1.0), m), 1e-15);
}

TEST(Discretize, TinyStepApproachesIdentity)
{
    const auto m = discretize_implicit(one_channel(1.0, 5.0), 1e-8).minv.blocks[0];
    EXPECT_NEAR(m.a, 1.0, 1e-7);
    EXPECT_NEAR(m.b, 0.0, 1e-7);
    EXPECT_NEAR(m.c, 0.0, 1e-7);
    EXPECT_NEAR(m.d, 1.0, 1e-7);
}

TEST(Discretize, ZeroStiffnessExample)
{
    const auto d = discretize_implicit(one_channel(2.0, 0.0), 0.5);
    EXPECT_DOUBLE_EQ(d.schur[0], 0.5);
    const auto& m = d.minv.blocks[0];
    EXPECT_DOUBLE_EQ(m.a, 0.5);
    EXPECT_DOUBLE_EQ(m.b, 0.0);
    EXPECT_DOUBLE_EQ(m.c, 0.25);
    EXPECT_DOUBLE_EQ(m.d, 1.0);
}

TEST(Discretize, SingularChannelIsNamed)
{
    HeavyBallParams p = one_channel(1.0, 1.0);
    p.aDiag = {1.0, -2.0};  // 1 + 1 + (-2) = 0 at dt = 1
    p.B = {1.0, 1.0};
    p.C = {1.0, 1.0};
    try {
        discretize_implicit(p, 1.0);
        FAIL() << "expected SingularDiscretization";
    } catch (const SingularDiscretization& e) {
        EXPECT_EQ(e.channel(), 1u);
    }
}

TEST(Discretize, RejectsTinyOrInvalidSteps)
{
    EXPECT_THROW(discretize_implicit(one_channel(1.0, 1.0), 1e-300), ContractError);
    EXPECT_THROW(discretize_implicit(one_channel(1.0, 1.0), 0.0), ContractError);
    EXPECT_THROW(discretize_implicit(one_channel(-1.0, 1.0), 0.1), ContractError);
}

TEST(Inverse, IdentityHoldsOverRandomDraws)
{
    Rng rng(1);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const double g = rng.uniform(1e-6, 5.0);
        const double dt = rng.uniform(1e-6, 2.0);
        const double a = rng.uniform(-3.0, 5.0);
        if (std::abs(1.0 + g * dt + dt * dt * a) < 1e-3) continue;
        const auto m = step_matrix(g, dt, a);
        const auto inv = schur_inverse(g, dt, a);
        const double scale = std::max({1.0, std::abs(inv.a), std::abs(inv.b), std::abs(inv.c), std::abs(inv.d)});
        worst = std::max(worst, inverse_residual(m, inv) / scale);
    }
    EXPECT_LE(worst, 1e-12);
}

TEST(Inverse, FlippedLowerLeftSignIsDetected)
{
    EXPECT_TRUE(checks::inverse_identity(1000, LowerLeftSign::derived).passed);
    EXPECT_FALSE(checks::inverse_identity(1000, LowerLeftSign::flipped).passed);
    EXPECT_GT(inverse_residual(step_matrix(1.0, 1.0, 1.0), schur_inverse(1.0, 1.0, 1.0, LowerLeftSign::flipped)), 0.1);
}

TEST(Forward, ZeroInputGivesZeroOutput)
{
    Rng rng(2);
    HeavyBallParams p = random_params(rng, 4);
    p.bias.clear();
    const RealSeq y = hb_forward(p, discretize_implicit(p, 0.3), RealSeq(20, 1));
    for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, HandComputedTwoSteps)
{
    const HeavyBallParams p = one_channel(1.0, 1.0);
    RealSeq x(2, 1);
    x(0, 0) = 1.0;
    const auto tr = hb_forward_states(p, discretize_implicit(p, 1.0), x);
    EXPECT_NEAR(tr.states.state(0)[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(tr.states.state(0)[1], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(tr.states.state(1)[0], 0.0, 1e-15);
    EXPECT_NEAR(tr.states.state(1)[1], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(tr.y(0, 0), 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(tr.y(1, 0), 1.0 / 3.0, 1e-15);
}

TEST(Forward, ParallelMatchesSequential)
{
    Rng rng(3);
    for (int k = 0; k < 10; ++k) {
        const auto p = random_params(rng, 8);
        const auto d = discretize_implicit(p, rng.uniform(0.01, 1.0));
        const RealSeq x = random_input(rng, 500);
        const auto a = hb_forward(p, d, x, ScanPath::parallel);
        const auto b = hb_forward(p, d, x, ScanPath::sequential);
        EXPECT_LE(scan::worst_violation(a.data(), b.data(), 1e-9, 1e-12), 1.0);
    }
}

TEST(Forward, StateWidthIsDoubled)
{
    Rng rng(4);
    const auto p = random_params(rng, 5);
    const auto tr = hb_forward_states(p, discretize_implicit(p, 0.1), random_input(rng, 7));
    EXPECT_EQ(tr.states.width, 10u);
}

TEST(Forward, StructuredMatchesDenseScan)
{
    Rng rng(5);
    const auto p = random_params(rng, 4);
    const auto d = discretize_implicit(p, 0.2);
    const RealSeq x = random_input(rng, 200);
    std::vector<scan::AffineElement<double>> dense;
    for (std::size_t t = 0; t < x.rows(); ++t) dense.push_back(scan::densify(make_step(d.minv, d.delta, p.B, p.bias, x(t, 0))));
    const auto ds = scan::scan_parallel(dense, std::vector<double>(8, 0.0));
    const auto tr = hb_forward_states(p, d, x);
    EXPECT_LE(scan::worst_violation(tr.states.states, ds.states, 1e-11, 1e-12), 1.0);
}

TEST(Forward, OscillatorEnergyNeverIncreasesWithoutInput)
{
    Rng rng(6);
    for (int k = 0; k < 50; ++k) {
        auto p = random_params(rng, 6);
        p.bias.clear();
        for (double& a : p.aDiag) a = rng.uniform(1e-4, 10.0);
        RealSeq x(300, 1);
        x(0, 0) = 3.0;
        const auto tr = hb_forward_states(p, discretize_implicit(p, rng.uniform(0.01, 2.0)), x);
        double prev = oscillator_energy(p.aDiag, tr.states.state(0));
        for (std::size_t t = 1; t < 300; ++t) {
            const double e = oscillator_energy(p.aDiag, tr.states.state(t));
            ASSERT_LE(e, prev + 1e-12 * std::max(1.0, prev)) << "step " << t;
            prev = e;
        }
    }
}

TEST(Forward, EuclideanStateNormCanGrowUnderWeakDamping)
{
    // The energy above, not ||s||_2, is the dissipated quantity.
    const auto m = schur_inverse(0.01, 1.0, 1e-3);
    const double z = m.a * 1.0 + m.b * 1.0;
    const double h = m.c * 1.0 + m.d * 1.0;
    EXPECT_GT(z * z + h * h, 2.0);
    EXPECT_LE(z * z + 1e-3 * h * h, 1.0 + 1e-3);
}

TEST(SpectralRadius, Examples)
{
    EXPECT_DOUBLE_EQ(spectral_radius(one_channel(1.0, 0.0), 1.0)[0], 1.0);
    EXPECT_NEAR(spectral_radius(one_channel(0.5, 4.0), 1.0)[0], 1.0 / std::sqrt(5.5), 1e-10);
    EXPECT_NEAR(1.0 / std::sqrt(5.5), 0.42640, 1e-5);
}

TEST(SpectralRadius, AtMostOneForNonNegativeStiffness)
{
    EXPECT_TRUE(checks::stability(1000).passed);
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        const double g = rng.uniform(1e-3, 5.0);
        const double dt = rng.uniform(1e-3, 3.0);
        const double a = rng.uniform(0.0, 50.0);
        EXPECT_LE(spectral_radius(one_channel(g, a), dt)[0], 1.0 + 1e-12);
    }
}

TEST(SpectralRadius, MatchesPowerIteration)
{
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
        const double g = rng.uniform(0.1, 2.0);
        const double dt = rng.uniform(0.1, 2.0);
        const double a = rng.uniform(-0.2, 3.0);
        const auto m = schur_inverse(g, dt, a);
        auto p = m;
        for (int k = 0; k < 9; ++k) p = multiply(p, p);  // m^512
        const double norm = std::max({std::abs(p.a), std::abs(p.b), std::abs(p.c), std::abs(p.d)});
        const double est = std::pow(norm, 1.0 / 512.0);
        EXPECT_NEAR(est, spectral_radius(one_channel(g, a), dt)[0], 2e-2);
    }
}

TEST(TimeVarying, ConstantStepsReduceToTimeInvariant)
{
    EXPECT_TRUE(checks::heavyball_timevarying_reduction().passed);
}

TEST(TimeVarying, MatchesStepwiseEvaluation)
{
    Rng rng(9);
    const std::size_t n = 4;
    const std::size_t len = 64;
    auto p = random_params(rng, n);
    TimeVaryingInputs tv;
    for (std::size_t t = 0; t < len; ++t) {
        tv.deltas.push_back(rng.uniform(0.01, 1.0));
        DiagVec a(n);
        for (double& v : a) v = rng.uniform(0.0, 4.0);
        tv.aSeq.push_back(a);
        std::vector<double> b(n);
        for (double& v : b) v = rng.normal();
        tv.bSeq.push_back(b);
    }
    const RealSeq x = random_input(rng, len);
    const RealSeq y = hb_forward_timevarying(p, tv, x);
    std::vector<double> z(n, 0.0);
    std::vector<double> h(n, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
        double acc = p.D * x(t, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto m = schur_inverse(p.gamma, tv.deltas[t], tv.aSeq[t][i]);
            const double f = tv.deltas[t] * (tv.bSeq[t][i] * x(t, 0) + p.bias[i]);
            const double zn = m.a * (z[i] + f) + m.b * h[i];
            const double hn = m.c * (z[i] + f) + m.d * h[i];
            z[i] = zn;
            h[i] = hn;
            acc += p.C[i] * h[i];
        }
        EXPECT_NEAR(y(t, 0), acc, 1e-10 * std::max(1.0, std::abs(acc)));
    }
}

TEST(TimeVarying, SingularStepIsReported)
{
    auto p = one_channel(1.0, 1.0);
    TimeVaryingInputs tv{{0.5, 1.0, 0.5}, {{1.0}, {-2.0}, {1.0}}, {{1.0}, {1.0}, {1.0}}};
    try {
        hb_forward_timevarying(p, tv, RealSeq(3, 1, 1.0));
        FAIL() << "expected SingularDiscretization";
    } catch (const SingularDiscretization& e) {
        EXPECT_EQ(e.step(), 1u);
        EXPECT_EQ(e.channel(), 0u);
    }
    tv.deltas[2] = 1e-300;
    tv.aSeq[1] = {1.0};
    EXPECT_THROW(hb_forward_timevarying(p, tv, RealSeq(3, 1, 1.0)), ContractError);
}
