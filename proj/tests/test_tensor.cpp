#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <unordered_set>

#include "afd/errors.hpp"
#include "afd/ops.hpp"
#include "test_support.hpp"

using namespace afd;

TEST(Tensor, ShapeMustMatchData) {
    EXPECT_THROW(Tensor<float>({2, 3}, std::vector<float>(5)), DimensionError);
    EXPECT_THROW(Tensor<float>({0, 3}, {}), DimensionError);
    Tensor<float> t({2, 3}, std::vector<float>(6, 1.0f));
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_EQ(t.rank(), 2u);
    EXPECT_FALSE(t.has_grad());
}

TEST(Tensor, NonFiniteValuesAreErrors) {
    const float inf = std::numeric_limits<float>::infinity();
    EXPECT_THROW(Tensor<float>({1}, {inf}), NumericError);
    EXPECT_THROW(Tensor<float>({1}, {std::nanf("")}), NumericError);
    Tensor<float> big({1}, {3e38f});
    EXPECT_THROW(scale(big, 10.0), NumericError);
    Tensor<float> p({1}, {1.0f}, true);
    EXPECT_THROW(p.assign({inf}), NumericError);
}

TEST(Tensor, SumOfSquaresGradient) {
    Tensor<double> x({4}, {1.0, -2.0, 0.5, 3.0}, true);
    sum(square(x)).backward();
    ASSERT_TRUE(x.has_grad());
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Tensor, SigmoidDerivativeAtZero) {
    Tensor<double> x({1}, {0.0}, true);
    Tensor<double> y = sigmoid(x);
    EXPECT_DOUBLE_EQ(y.item(), 0.5);
    y.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 0.25);
}

TEST(Tensor, BackwardRequiresScalar) {
    Tensor<float> x({3}, {1, 2, 3}, true);
    EXPECT_THROW(square(x).backward(), UsageError);
    Tensor<float> c({1}, {1.0f});
    EXPECT_THROW(c.backward(), UsageError);  // not on the tape
}

TEST(Tensor, GradientsAccumulateUntilZeroed) {
    std::mt19937_64 rng(3);
    auto x = test_util::random_tensor<double>({5}, rng, -1, 1, true);
    Tensor<double> loss = sum(mul(x, affine(x, 2.0, 1.0)));
    loss.backward();
    std::vector<double> once(x.grad().begin(), x.grad().end());
    loss.backward();
    for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 * once[i]);
    x.zero_grad();
    for (double g : x.grad()) EXPECT_EQ(g, 0.0);
    x.clear_grad();
    EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, BackwardIsLinearInTheLoss) {
    std::mt19937_64 rng(4);
    auto x = test_util::random_tensor<double>({2, 3}, rng, -1, 1, true);
    auto build = [&] { return sum(square(sigmoid(x))); };
    build().backward();
    std::vector<double> g(x.grad().begin(), x.grad().end());
    x.clear_grad();
    scale(build(), 4.0).backward();
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(x.grad()[i], 4.0 * g[i]);
    x.clear_grad();
    // Non power-of-two factors may round differently along the chain.
    scale(build(), 9.0).backward();
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LE(test_util::rel_error(x.grad()[i], 9.0 * g[i]), 1e-14);
}

TEST(Tensor, UnreachableLeavesKeepNoGradient) {
    Tensor<float> a({2}, {1, 2}, true);
    Tensor<float> b({2}, {3, 4}, true);
    sum(a).backward();
    EXPECT_TRUE(a.has_grad());
    EXPECT_FALSE(b.has_grad());
}

TEST(Tensor, TapeOrderIsTopologicalAndVisitsOnce) {
    Tensor<double> x({3}, {1, 2, 3}, true);
    Tensor<double> shared = square(x);
    Tensor<double> left = affine(shared, 2.0, 0.0);
    Tensor<double> right = mul(shared, x);
    Tensor<double> loss = sum(add(left, right));
    auto order = tape_order(loss);
    std::unordered_set<const detail::Node<double>*> seen;
    for (const auto* node : order) {
        EXPECT_TRUE(seen.insert(node).second) << "node visited twice";
        for (const auto& in : node->inputs) {
            if (in->requires_grad) EXPECT_TRUE(seen.count(in.get())) << "input after its consumer";
        }
    }
    EXPECT_EQ(order.back(), loss.node().get());
    EXPECT_EQ(order.size(), 6u);  // x, shared, left, right, add, sum
}

TEST(Tensor, DiamondGradientSumsBothPaths) {
    Tensor<double> x({1}, {1.5}, true);
    Tensor<double> y = square(x);
    sum(add(y, y)).backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 4.0 * 1.5);
}

TEST(Tensor, NoGradGuardSkipsRecording) {
    Tensor<float> x({2}, {1, 2}, true);
    Tensor<float> y;
    {
        NoGradGuard guard;
        EXPECT_FALSE(grad_enabled());
        y = square(x);
    }
    EXPECT_TRUE(grad_enabled());
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(square(x).requires_grad());
}

TEST(Tensor, DetachCutsHistory) {
    Tensor<double> x({2}, {1, 2}, true);
    Tensor<double> y = square(x).detach();
    EXPECT_FALSE(y.requires_grad());
    EXPECT_TRUE(y.is_leaf());
    EXPECT_EQ(y[1], 4.0);
}

TEST(Tensor, AssignKeepsRecordedGraphOnOldValues) {
    Tensor<double> w({1}, {2.0}, true);
    Tensor<double> x({1}, {3.0}, true);
    Tensor<double> loss = sum(mul(w, x));
    w.assign({100.0});
    loss.backward();
    EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);  // forward-time weight
    EXPECT_DOUBLE_EQ(w.grad()[0], 3.0);
    EXPECT_THROW(w.assign({1.0, 2.0}), DimensionError);
    EXPECT_THROW(square(w).assign({1.0}), UsageError);
}

TEST(Tensor, BackwardToReachesOnlyTargets) {
    Tensor<double> a({2}, {1, 2}, true);
    Tensor<double> b({2}, {3, 4}, true);
    Tensor<double> loss = sum(mul(square(a), b));
    const Tensor<double> targets[] = {b};
    loss.backward_to(targets);
    EXPECT_FALSE(a.has_grad());
    ASSERT_TRUE(b.has_grad());
    EXPECT_DOUBLE_EQ(b.grad()[0], 1.0);
    EXPECT_DOUBLE_EQ(b.grad()[1], 4.0);
}

TEST(Tensor, BackwardToInteriorTarget) {
    Tensor<double> a({2}, {1, 2}, true);
    Tensor<double> mid = square(a);
    Tensor<double> loss = sum(affine(mid, 3.0, 0.0));
    const Tensor<double> targets[] = {mid};
    loss.backward_to(targets);
    ASSERT_TRUE(mid.has_grad());
    EXPECT_DOUBLE_EQ(mid.grad()[0], 3.0);
    EXPECT_FALSE(a.has_grad());
}

TEST(Tensor, BackwardToMatchesFullBackwardOnTargets) {
    std::mt19937_64 rng(8);
    auto a = test_util::random_tensor<double>({3}, rng, -1, 1, true);
    auto b = test_util::random_tensor<double>({3}, rng, -1, 1, true);
    auto build = [&] { return sum(mul(sigmoid(a), square(b))); };
    build().backward();
    std::vector<double> full(b.grad().begin(), b.grad().end());
    a.clear_grad();
    b.clear_grad();
    const Tensor<double> targets[] = {b};
    build().backward_to(targets);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(b.grad()[i], full[i]);
}

TEST(Tensor, DeterministicAcrossRuns) {
    auto run = [] {
        std::mt19937_64 rng(11);
        auto x = test_util::random_tensor<float>({2, 3, 6, 6}, rng);
        auto k = test_util::random_tensor<float>({4, 3, 3, 3}, rng, -1, 1, true);
        Tensor<float> y = sum(square(conv2d(x, k, 1, 1)));
        y.backward();
        return std::make_pair(y.item(), std::vector<float>(k.grad().begin(), k.grad().end()));
    };
    auto first = run();
    auto second = run();
    EXPECT_EQ(first.first, second.first);
    EXPECT_EQ(first.second, second.second);
}
