#include <gtest/gtest.h>

#include <cmath>

#include "mssm/numkit.hpp"

using namespace mssm;

TEST(Softplus, Values)
{
    EXPECT_DOUBLE_EQ(softplus(0.0), 0.6931471805599453);
    EXPECT_NEAR(softplus(50.0), 50.0, 1e-12);
    EXPECT_NEAR(softplus(-20.0), 2.0611536e-9, 2.0611536e-9 * 1e-7);
    EXPECT_NEAR(softplus(-20.0), std::log1p(std::exp(-20.0)), 2.1e-9 * 1e-15);
    EXPECT_TRUE(std::isfinite(softplus(800.0)));
}

TEST(Softplus, MonotoneAboveReluAndOddPart)
{
    Rng rng(1);
    double prev = softplus(-40.0);
    for (double x = -39.9; x < 40.0; x += 0.1) {
        const double s = softplus(x);
        EXPECT_GT(s, prev);
        if (x < 30.0) {
            EXPECT_GT(s, std::max(x, 0.0));
        } else {
            EXPECT_GE(s, x);  // log1p(exp(-x)) is below half an ulp of x
        }
        prev = s;
    }
    for (int i = 0; i < 1000; ++i) {
        const double x = rng.uniform(-30.0, 30.0);
        EXPECT_NEAR(softplus(x) - softplus(-x), x, 1e-12);
    }
}

TEST(Softplus, InverseRoundTrip)
{
    for (double y : {1e-6, 0.01, 0.5, 1.0, 10.0, 100.0}) EXPECT_NEAR(softplus(softplus_inverse(y)), y, 1e-12 * std::max(1.0, y));
}

TEST(Sigmoid, LogitRoundTripAndEndpoints)
{
    for (double p : {0.01, 0.3, 0.5, 0.9, 0.999}) EXPECT_NEAR(sigmoid(logit(p)), p, 1e-15);
    EXPECT_EQ(sigmoid(logit(0.0)), 0.0);
    EXPECT_EQ(sigmoid(0.0), 0.5);
    EXPECT_TRUE(std::isfinite(sigmoid(-800.0)));
}

TEST(Complex, Multiplication)
{
    EXPECT_EQ(complex_mul({0, 1}, {0, 1}), Complex(-1, 0));
    EXPECT_EQ(complex_mul({1, 0}, {2.5, -3.0}), Complex(2.5, -3.0));
    const Complex b = Complex::polar(0.9, 0.3);
    Complex p{1.0};
    for (int k = 0; k < 5; ++k) p = p * b;
    EXPECT_NEAR(p.magnitude(), 0.59049, 1e-12);
}

TEST(Complex, AssociativeCommutativeOnUnitCircle)
{
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const Complex a = Complex::polar(1.0, rng.uniform(-M_PI, M_PI));
        const Complex b = Complex::polar(1.0, rng.uniform(-M_PI, M_PI));
        const Complex c = Complex::polar(1.0, rng.uniform(-M_PI, M_PI));
        EXPECT_LE(((a * b) * c - a * (b * c)).magnitude(), 1e-14);
        EXPECT_LE((a * b - b * a).magnitude(), 1e-14);
    }
}

TEST(ElementwiseExp, Values)
{
    EXPECT_EQ(elementwise_exp({0.0, 0.0}, 1.0), (DiagVec{1.0, 1.0}));
    EXPECT_DOUBLE_EQ(elementwise_exp({-2.0}, 0.1)[0], 0.8187307530779818);
    const auto e = elementwise_exp({-1.0, -3.0}, 0.5);
    EXPECT_DOUBLE_EQ(e[0], std::exp(-0.5));
    EXPECT_DOUBLE_EQ(e[1], std::exp(-1.5));
}

TEST(ElementwiseExp, ScalesAdd)
{
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const DiagVec d{rng.uniform(-5, 1), rng.uniform(-5, 1), rng.uniform(-5, 1)};
        const double s1 = rng.uniform(0, 2);
        const double s2 = rng.uniform(0, 2);
        const auto whole = elementwise_exp(d, s1 + s2);
        const auto a = elementwise_exp(d, s1);
        const auto b = elementwise_exp(d, s2);
        for (std::size_t j = 0; j < d.size(); ++j) EXPECT_LE(rel_error(whole[j], a[j] * b[j]), 1e-12);
    }
}

TEST(Rng, EqualSeedsEqualStreams)
{
    Rng a(123);
    Rng b(123);
    Rng c(124);
    bool differs = false;
    for (int i = 0; i < 10000; ++i) {
        const auto x = a.next_u64();
        ASSERT_EQ(x, b.next_u64());
        differs = differs || x != c.next_u64();
    }
    EXPECT_TRUE(differs);
}

TEST(Rng, UniformRangeAndNormalMoments)
{
    Rng rng(9);
    double sum = 0.0;
    double sq = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        const double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    EXPECT_NEAR(sum / n, 0.0, 0.02);
    EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, SplitIsDeterministicAndDistinct)
{
    Rng a(5);
    Rng b(5);
    Rng ca = a.split();
    Rng cb = b.split();
    EXPECT_EQ(ca.next_u64(), cb.next_u64());
    EXPECT_NE(a.next_u64(), ca.next_u64());
}

TEST(Matrix, ShapeContract)
{
    EXPECT_THROW(Matrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}), ContractError);
    RealSeq x(3, 2);
    EXPECT_NO_THROW(require_sequence(x, "t"));
    x(1, 1) = std::nan("");
    EXPECT_THROW(require_sequence(x, "t"), ContractError);
    EXPECT_THROW(require_sequence(RealSeq(0, 2), "t"), ContractError);
}

TEST(Shortest, RoundTrips)
{
    EXPECT_EQ(shortest(0.1), "0.1");
    EXPECT_EQ(shortest(2.0), "2");
    EXPECT_EQ(std::stod(shortest(1.0 / 3.0)), 1.0 / 3.0);
}
