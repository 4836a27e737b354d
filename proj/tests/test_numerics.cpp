#include <gtest/gtest.h>

#include <cmath>

#include "conns/numerics.hpp"
#include "conns/rng.hpp"

using namespace conns;

namespace {

// Independent long-double evaluation of softmax, written before the library
// kernel and kept as its oracle.
Vec softmax_oracle(const Vec& x) {
    long double sum = 0.0L;
    std::vector<long double> e(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        e[i] = std::exp(static_cast<long double>(x[i]));
        sum += e[i];
    }
    Vec out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / sum);
    return out;
}

// Scalar evaluation of the stated half-pixel bilinear formula for one output
// pixel.
double bilinear_oracle_at(const Grid2D& src, int out_h, int out_w, int r, int c) {
    double y = (r + 0.5) * static_cast<double>(src.h) / out_h - 0.5;
    double x = (c + 0.5) * static_cast<double>(src.w) / out_w - 0.5;
    y = std::clamp(y, 0.0, static_cast<double>(src.h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(src.w - 1));
    int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
    int y1 = std::min(y0 + 1, src.h - 1), x1 = std::min(x0 + 1, src.w - 1);
    double fy = y - y0, fx = x - x0;
    return src.at(y0, x0) * (1 - fy) * (1 - fx) + src.at(y0, x1) * (1 - fy) * fx +
           src.at(y1, x0) * fy * (1 - fx) + src.at(y1, x1) * fy * fx;
}

}  // namespace

TEST(Softmax, UniformInputsGiveUniformWeights) {
    Vec out = softmax({2.5, 2.5, 2.5});
    for (double v : out) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ClosedFormTwoPoint) {
    Vec out = softmax({0.0, std::log(3.0)});
    EXPECT_NEAR(out[0], 0.25, 1e-12);
    EXPECT_NEAR(out[1], 0.75, 1e-12);
}

TEST(Softmax, MatchesExtendedPrecisionOracle) {
    Rng rng(7);
    Vec x(49);
    for (double& v : x) v = rng.next_range(-10.0, 10.0);
    Vec got = softmax(x);
    Vec want = softmax_oracle(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    double sum = 0.0;
    for (double v : got) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Softmax, ShiftInvariance) {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        Vec x(8);
        for (double& v : x) v = rng.next_range(-5.0, 5.0);
        Vec shifted = x;
        double c = rng.next_range(-100.0, 100.0);
        for (double& v : shifted) v += c;
        Vec a = softmax(x);
        Vec b = softmax(shifted);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(Softmax, OrderPreserving) {
    Vec out = softmax({1.0, 3.0, 2.0});
    EXPECT_GT(out[1], out[2]);
    EXPECT_GT(out[2], out[0]);
}

TEST(Softmax, RejectsNonFinite) {
    EXPECT_THROW(softmax({1.0, std::numeric_limits<double>::infinity()}), NonFiniteInput);
    EXPECT_THROW(softmax({std::nan("")}), NonFiniteInput);
}

TEST(L2Normalize, ThreeFourFive) {
    Vec out = l2_normalize({3.0, 4.0});
    EXPECT_DOUBLE_EQ(out[0], 0.6);
    EXPECT_DOUBLE_EQ(out[1], 0.8);
}

TEST(L2Normalize, Idempotent) {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        Vec x(16);
        for (double& v : x) v = rng.next_range(-2.0, 2.0);
        Vec once = l2_normalize(x);
        Vec twice = l2_normalize(once);
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-12);
        EXPECT_NEAR(norm2(once), 1.0, 1e-12);
    }
}

TEST(L2Normalize, ZeroVectorIsDegenerate) {
    EXPECT_THROW(l2_normalize({0.0, 0.0}), DegenerateNorm);
}

TEST(Bilinear, ConstantStaysConstant) {
    Grid2D g(3, 3, 0.7);
    Grid2D out = bilinear_resize(g, 10, 17);
    for (double v : out.v) EXPECT_DOUBLE_EQ(v, 0.7);
}

TEST(Bilinear, IdentityDimsCopy) {
    Grid2D g(4, 5);
    Rng rng(21);
    for (double& v : g.v) v = rng.next_double();
    Grid2D out = bilinear_resize(g, 4, 5);
    for (std::size_t i = 0; i < g.v.size(); ++i) EXPECT_DOUBLE_EQ(out.v[i], g.v[i]);
}

TEST(Bilinear, TwoByTwoUpscaleMatchesFormulaOracle) {
    Grid2D g(2, 2);
    g.at(0, 0) = 0.0;
    g.at(0, 1) = 1.0;
    g.at(1, 0) = 0.0;
    g.at(1, 1) = 1.0;
    Grid2D out = bilinear_resize(g, 4, 4);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c)
            EXPECT_DOUBLE_EQ(out.at(r, c), bilinear_oracle_at(g, 4, 4, r, c));
    // hand check of one interior sample: output col 1 samples x = 0.25
    EXPECT_DOUBLE_EQ(out.at(0, 1), 0.25);
}

TEST(Bilinear, RandomResizeMatchesOracleAndStaysBounded) {
    Rng rng(5);
    Grid2D g(7, 7);
    for (double& v : g.v) v = rng.next_double();
    double lo = *std::min_element(g.v.begin(), g.v.end());
    double hi = *std::max_element(g.v.begin(), g.v.end());
    Grid2D out = bilinear_resize(g, 63, 63);
    for (int r = 0; r < out.h; ++r)
        for (int c = 0; c < out.w; ++c) {
            EXPECT_DOUBLE_EQ(out.at(r, c), bilinear_oracle_at(g, 63, 63, r, c));
            EXPECT_GE(out.at(r, c), lo - 1e-12);
            EXPECT_LE(out.at(r, c), hi + 1e-12);
        }
}

TEST(Bilinear, EmptyGridRejected) {
    Grid2D g;
    EXPECT_THROW(bilinear_resize(g, 2, 2), EmptyGrid);
    Grid2D ok(2, 2, 1.0);
    EXPECT_THROW(bilinear_resize(ok, 0, 2), EmptyGrid);
}
