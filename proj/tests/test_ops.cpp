#include <gtest/gtest.h>

#include <cmath>

#include "afd/errors.hpp"
#include "afd/ops.hpp"
#include "test_support.hpp"

using namespace afd;
using afd::test_util::random_tensor;

namespace {

// Triple loop.
std::vector<double> linear_oracle(const Tensor<float>& x, const Tensor<float>& w, const Tensor<float>& b) {
    const std::size_t B = x.dim(0), in = x.dim(1), out = w.dim(0);
    std::vector<double> y(B * out);
    for (std::size_t n = 0; n < B; ++n) {
        for (std::size_t o = 0; o < out; ++o) {
            double acc = b[o];
            for (std::size_t i = 0; i < in; ++i) acc += static_cast<double>(x[n * in + i]) * w[o * in + i];
            y[n * out + o] = acc;
        }
    }
    return y;
}

// Sliding window with explicit zero padding.
std::vector<double> conv_oracle(const Tensor<float>& x, const Tensor<float>& k, std::size_t stride, std::size_t pad) {
    const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t O = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    const std::size_t Ho = (H + 2 * pad - kh) / stride + 1, Wo = (W + 2 * pad - kw) / stride + 1;
    std::vector<double> y(B * O * Ho * Wo, 0.0);
    for (std::size_t n = 0; n < B; ++n)
        for (std::size_t o = 0; o < O; ++o)
            for (std::size_t i = 0; i < Ho; ++i)
                for (std::size_t j = 0; j < Wo; ++j) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < C; ++c)
                        for (std::size_t u = 0; u < kh; ++u)
                            for (std::size_t v = 0; v < kw; ++v) {
                                const long r = static_cast<long>(i * stride + u) - static_cast<long>(pad);
                                const long s = static_cast<long>(j * stride + v) - static_cast<long>(pad);
                                if (r < 0 || s < 0 || r >= static_cast<long>(H) || s >= static_cast<long>(W)) continue;
                                acc += static_cast<double>(x[((n * C + c) * H + r) * W + s]) *
                                       k[((o * C + c) * kh + u) * kw + v];
                            }
                    y[((n * O + o) * Ho + i) * Wo + j] = acc;
                }
    return y;
}

}  // namespace

TEST(Linear, IdentityAndHandSum) {
    Tensor<float> x({1, 2}, {1, 2});
    Tensor<float> eye({2, 2}, {1, 0, 0, 1});
    Tensor<float> zero({2}, {0, 0});
    auto y = linear(x, eye, zero);
    EXPECT_EQ(y[0], 1.0f);
    EXPECT_EQ(y[1], 2.0f);
    auto z = linear(Tensor<float>({1, 2}, {1, 1}), Tensor<float>({1, 2}, {1, 1}), Tensor<float>({1}, {3}));
    EXPECT_EQ(z.item(), 5.0f);
}

TEST(Linear, MatchesLoopOracle) {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_tensor<float>({4, 3}, rng);
        auto w = random_tensor<float>({2, 3}, rng);
        auto b = random_tensor<float>({2}, rng);
        auto y = linear(x, w, b);
        auto ref = linear_oracle(x, w, b);
        ASSERT_EQ(y.shape(), (Shape{4, 2}));
        for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
    }
}

TEST(Linear, ShapeMismatch) {
    EXPECT_THROW(linear(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({4, 2}), Tensor<float>::zeros({4})),
                 DimensionError);
    EXPECT_THROW(linear(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({4, 3}), Tensor<float>::zeros({3})),
                 DimensionError);
}

TEST(Conv2d, OneByOneIdentity) {
    std::mt19937_64 rng(22);
    auto x = random_tensor<float>({2, 1, 5, 4}, rng);
    auto y = conv2d(x, Tensor<float>({1, 1, 1, 1}, {1.0f}), 1, 0);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, OnesKernelSumsWindow) {
    auto y = conv2d(Tensor<float>::full({1, 1, 5, 5}, 1.0f), Tensor<float>::full({1, 1, 3, 3}, 1.0f), 1, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 3, 3}));
    for (float v : y.data()) EXPECT_EQ(v, 9.0f);
}

TEST(Conv2d, MatchesSlidingWindowOracle) {
    std::mt19937_64 rng(23);
    struct Case {
        Shape x, k;
        std::size_t stride, pad;
    };
    const Case cases[] = {{{1, 2, 6, 6}, {3, 2, 3, 3}, 2, 1}, {{2, 3, 7, 5}, {4, 3, 3, 3}, 1, 1},
                          {{1, 1, 8, 8}, {2, 1, 5, 5}, 3, 2}, {{3, 2, 4, 4}, {1, 2, 1, 1}, 1, 0}};
    for (const auto& c : cases) {
        for (int trial = 0; trial < 3; ++trial) {
            auto x = random_tensor<float>(c.x, rng);
            auto k = random_tensor<float>(c.k, rng);
            auto y = conv2d(x, k, c.stride, c.pad);
            auto ref = conv_oracle(x, k, c.stride, c.pad);
            ASSERT_EQ(y.numel(), ref.size());
            for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-6);
        }
    }
}

TEST(Conv2d, OutputExtentAndBias) {
    auto y = conv2d(Tensor<float>::zeros({1, 1, 6, 6}), Tensor<float>::zeros({2, 1, 3, 3}),
                    Tensor<float>({2}, {0.5f, -1.0f}), 2, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 2, 3, 3}));
    for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(y[i], 0.5f);
    for (std::size_t i = 9; i < 18; ++i) EXPECT_EQ(y[i], -1.0f);
}

TEST(Conv2d, KernelLargerThanPaddedInput) {
    EXPECT_THROW(conv2d(Tensor<float>::zeros({1, 1, 2, 2}), Tensor<float>::zeros({1, 1, 5, 5}), 1, 1), DimensionError);
    EXPECT_THROW(conv2d(Tensor<float>::zeros({1, 2, 4, 4}), Tensor<float>::zeros({1, 3, 3, 3}), 1, 1), DimensionError);
}

TEST(BatchNorm, ConstantInputGivesZeros) {
    auto y = batch_norm(Tensor<float>::full({3, 2, 2, 2}, 4.0f), Tensor<float>::full({2}, 1.0f),
                        Tensor<float>::zeros({2}), NormMode::train, nullptr);
    for (float v : y.data()) EXPECT_NEAR(v, 0.0f, 1e-6);
}

TEST(BatchNorm, AffineShiftMovesMean) {
    std::mt19937_64 rng(24);
    auto x = random_tensor<float>({4, 2, 3, 3}, rng, -2, 2);
    auto y = batch_norm(x, Tensor<float>::full({2}, 1.0f), Tensor<float>::full({2}, 5.0f), NormMode::train, nullptr);
    for (std::size_t c = 0; c < 2; ++c) {
        double m = 0.0;
        for (std::size_t n = 0; n < 4; ++n)
            for (std::size_t i = 0; i < 9; ++i) m += y[(n * 2 + c) * 9 + i];
        EXPECT_NEAR(m / 36.0, 5.0, 1e-5);
    }
}

TEST(BatchNorm, OutputStatisticsAreStandard) {
    std::mt19937_64 rng(25);
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor<double>({5, 3, 4, 4}, rng, -3, 7);
        auto y = batch_norm(x, Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3}), NormMode::train, nullptr);
        for (std::size_t c = 0; c < 3; ++c) {
            double m = 0.0, v = 0.0;
            for (std::size_t n = 0; n < 5; ++n)
                for (std::size_t i = 0; i < 16; ++i) m += y[(n * 3 + c) * 16 + i];
            m /= 80.0;
            for (std::size_t n = 0; n < 5; ++n)
                for (std::size_t i = 0; i < 16; ++i) v += std::pow(y[(n * 3 + c) * 16 + i] - m, 2);
            v /= 80.0;
            EXPECT_NEAR(m, 0.0, 1e-4);
            EXPECT_NEAR(v, 1.0, 1e-4);
        }
    }
}

TEST(BatchNorm, RunningStatsFollowMovingAverage) {
    Tensor<double> x({2, 1, 1, 2}, {1, 3, 5, 7});  // mean 4, biased var 5, unbiased 20/3
    RunningStats<double> stats = RunningStats<double>::initialized(1);
    batch_norm(x, Tensor<double>::full({1}, 1.0), Tensor<double>::zeros({1}), NormMode::train, &stats);
    EXPECT_NEAR(stats.mean[0], 0.1 * 4.0, 1e-12);
    EXPECT_NEAR(stats.var[0], 0.9 * 1.0 + 0.1 * (20.0 / 3.0), 1e-12);
}

TEST(BatchNorm, EvalUsesRunningStats) {
    RunningStats<double> stats{{2.0}, {4.0}, true};
    Tensor<double> x({1, 1, 1, 2}, {2.0, 6.0});
    auto y = batch_norm(x, Tensor<double>::full({1}, 1.0), Tensor<double>::zeros({1}), NormMode::eval, &stats);
    EXPECT_NEAR(y[0], 0.0, 1e-12);
    EXPECT_NEAR(y[1], 4.0 / std::sqrt(4.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, EvalWithoutStatsIsStateError) {
    auto x = Tensor<float>::zeros({1, 1, 2, 2});
    auto g = Tensor<float>::full({1}, 1.0f);
    auto b = Tensor<float>::zeros({1});
    EXPECT_THROW(batch_norm(x, g, b, NormMode::eval, nullptr), StateError);
    RunningStats<float> empty;
    EXPECT_THROW(batch_norm(x, g, b, NormMode::eval, &empty), StateError);
}

TEST(Activation, Definitions) {
    Tensor<float> x({2}, {-1.0f, 1.0f});
    auto l = leaky_relu(x, 0.2);
    EXPECT_FLOAT_EQ(l[0], -0.2f);
    EXPECT_FLOAT_EQ(l[1], 1.0f);
    EXPECT_EQ(sigmoid(Tensor<float>({1}, {0.0f})).item(), 0.5f);
    EXPECT_THROW(leaky_relu(x, 1.0), ConfigError);
    EXPECT_THROW(leaky_relu(x, -0.1), ConfigError);
}

TEST(Activation, ReluEqualsZeroSlopeLeaky) {
    std::mt19937_64 rng(26);
    auto x = random_tensor<float>({3, 7}, rng, -2, 2);
    auto a = relu(x);
    auto b = leaky_relu(x, 0.0);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Activation, SigmoidStaysInsideOpenInterval) {
    Tensor<double> x({4}, {-30.0, -5.0, 5.0, 30.0});
    const auto y = sigmoid(x);
    for (double v : y.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    Tensor<float> xf({2}, {-15.0f, 15.0f});
    const auto yf = sigmoid(xf);
    for (float v : yf.data()) {
        EXPECT_GT(v, 0.0f);
        EXPECT_LT(v, 1.0f);
    }
}

TEST(GlobalAvgPool, HandValues) {
    auto c = global_avg_pool(Tensor<float>::full({2, 3, 4, 5}, 1.5f));
    ASSERT_EQ(c.shape(), (Shape{2, 3}));
    for (float v : c.data()) EXPECT_EQ(v, 1.5f);
    EXPECT_EQ(global_avg_pool(Tensor<float>({1, 1, 2, 2}, {1, 2, 3, 4})).item(), 2.5f);
}

TEST(GlobalAvgPool, MatchesLoopOracle) {
    std::mt19937_64 rng(27);
    for (int trial = 0; trial < 10; ++trial) {
        auto x = random_tensor<float>({2, 3, 5, 4}, rng);
        auto y = global_avg_pool(x);
        for (std::size_t p = 0; p < 6; ++p) {
            double acc = 0.0;
            for (std::size_t i = 0; i < 20; ++i) acc += x[p * 20 + i];
            EXPECT_NEAR(y[p], acc / 20.0, 1e-6);
        }
    }
}

TEST(MaxPool, PicksWindowMaximum) {
    Tensor<float> x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 7});
    auto y = max_pool2d(x, 2);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
    EXPECT_EQ(y[0], 5.0f);
    EXPECT_EQ(y[1], 8.0f);
}

TEST(Softmax, RowsAreStochasticAndShiftInvariant) {
    Tensor<double> z({2, 3}, {1.0, 2.0, 3.0, 101.0, 102.0, 103.0});
    for (double T : {0.5, 1.0, 3.0, 10.0}) {
        auto p = softmax(z, T);
        for (std::size_t r = 0; r < 2; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < 3; ++c) s += p[r * 3 + c];
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(p[c], p[3 + c], 1e-12);
    }
    EXPECT_THROW(softmax(z, 0.0), ConfigError);
    EXPECT_THROW(log_softmax(z, -1.0), ConfigError);
}

TEST(ElementwiseOps, ShapesMustAgree) {
    EXPECT_THROW(add(Tensor<float>::zeros({2}), Tensor<float>::zeros({3})), DimensionError);
    EXPECT_THROW(reshape(Tensor<float>::zeros({2, 3}), {4}), DimensionError);
    auto r = reshape(Tensor<float>({2, 2}, {1, 2, 3, 4}), {4});
    EXPECT_EQ(r[3], 4.0f);
}
