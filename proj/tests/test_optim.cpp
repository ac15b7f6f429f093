#include "psk/optim.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace psk;

TEST(Adam, FirstStepMovesByLearningRateAgainstGradient)
{
    // after bias correction m = g, v = g^2, so the first step is lr * sign(g)
    std::vector<double> theta{0.5, -0.25, 1.0};
    const std::vector<double> g{3.0, -0.01, 0.0};
    AdamState st(3);
    adam_step(theta, g, st, 1e-3);
    EXPECT_NEAR(theta[0], 0.5 - 1e-3, 1e-7);
    EXPECT_NEAR(theta[1], -0.25 + 1e-3, 1e-7);
    EXPECT_EQ(theta[2], 1.0);
    EXPECT_EQ(st.step, 1);
}

TEST(Adam, FrozenRangeUntouched)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<double> theta(20), g(20);
    for (auto& v : theta) v = static_cast<float>(n(rng));
    const auto before = theta;
    AdamState st(20);
    for (int it = 0; it < 5; ++it) {
        for (auto& v : g) v = n(rng);
        adam_step(theta, g, st, 1e-2, {}, 8, 20);
    }
    for (std::size_t i = 0; i < 8; ++i) {
        EXPECT_EQ(theta[i], before[i]);
        EXPECT_EQ(st.m[i], 0.0);
        EXPECT_EQ(st.v[i], 0.0);
    }
    for (std::size_t i = 8; i < 20; ++i) EXPECT_NE(theta[i], before[i]);
}

TEST(Adam, StateIsFloat32Exact)
{
    std::vector<double> theta{0.1, 0.2, 0.3};
    AdamState st(3);
    for (int it = 0; it < 3; ++it) adam_step(theta, std::vector<double>{0.123456789, -1.0 / 3.0, 2.0 / 7.0}, st, 1e-3);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(theta[i], round_f32(theta[i]));
        EXPECT_EQ(st.m[i], round_f32(st.m[i]));
        EXPECT_EQ(st.v[i], round_f32(st.v[i]));
    }
}

TEST(Adam, MinimizesQuadratic)
{
    std::vector<double> theta{2.0, -3.0};
    AdamState st(2);
    for (int it = 0; it < 3000; ++it) adam_step(theta, std::vector<double>{2 * (theta[0] - 1.0), 2 * (theta[1] + 0.5)}, st, 1e-2);
    EXPECT_NEAR(theta[0], 1.0, 1e-2);
    EXPECT_NEAR(theta[1], -0.5, 1e-2);
}

TEST(Adam, RejectsBadInput)
{
    std::vector<double> theta{0.0, 0.0};
    AdamState st(2);
    EXPECT_THROW(adam_step(theta, std::vector<double>{1.0}, st, 1e-3), Error);
    EXPECT_THROW(adam_step(theta, std::vector<double>{1.0, 1.0}, st, 0.0), Error);
    try {
        adam_step(theta, std::vector<double>{std::nan(""), 1.0}, st, 1e-3);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::NonFinite);
    }
}
