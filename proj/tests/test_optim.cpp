#include <gtest/gtest.h>

#include <cmath>

#include "afd/errors.hpp"
#include "afd/optim.hpp"
#include "test_support.hpp"

using namespace afd;

namespace {

NamedTensor<float> param(std::string name, std::vector<float> values) {
    const std::size_t n = values.size();
    return {std::move(name), Tensor<float>({n}, std::move(values), true)};
}

// Gives `p` the gradient `g` by backpropagating sum(p * g).
void set_grad(const Tensor<float>& p, const std::vector<float>& g) {
    sum(mul(p, Tensor<float>(p.shape(), g))).backward();
}

}  // namespace

TEST(Schedule, LogitPhaseMilestones) {
    const std::vector<int> m{150, 225};
    EXPECT_DOUBLE_EQ(lr_at(0, 0.1, m), 0.1);
    EXPECT_DOUBLE_EQ(lr_at(149, 0.1, m), 0.1);
    EXPECT_DOUBLE_EQ(lr_at(150, 0.1, m), 0.01);
    EXPECT_DOUBLE_EQ(lr_at(160, 0.1, m), 0.01);
    EXPECT_DOUBLE_EQ(lr_at(225, 0.1, m), 0.001);
    EXPECT_DOUBLE_EQ(lr_at(230, 0.1, m), 0.001);
}

TEST(Schedule, AdversarialPhaseMilestones) {
    const std::vector<int> m{75, 150};
    EXPECT_DOUBLE_EQ(lr_at(0, 2e-5, m), 2e-5);
    EXPECT_DOUBLE_EQ(lr_at(80, 2e-5, m), 2e-6);
    EXPECT_DOUBLE_EQ(lr_at(150, 2e-5, m), 2e-7);
}

TEST(Schedule, PiecewiseConstantNonIncreasingWithJumpsOnlyAtMilestones) {
    const std::vector<int> m{3, 7, 12};
    double prev = lr_at(0, 1.0, m, 0.5);
    for (int e = 1; e < 20; ++e) {
        const double cur = lr_at(e, 1.0, m, 0.5);
        EXPECT_LE(cur, prev);
        const bool is_milestone = std::find(m.begin(), m.end(), e) != m.end();
        EXPECT_EQ(cur != prev, is_milestone) << "epoch " << e;
        prev = cur;
    }
    EXPECT_EQ(lr_at(5, 0.3, {}, 0.1), 0.3);
}

TEST(Sgd, MatchesMomentumRecurrence) {
    auto p = param("w", {1.0f, -2.0f});
    Sgd opt({p}, {0.1, 0.9, 1e-4});
    std::vector<double> w{1.0, -2.0}, buf{0.0, 0.0};
    const std::vector<std::vector<float>> grads{{0.5f, -1.0f}, {0.25f, 0.75f}, {-0.5f, 0.1f}};
    for (std::size_t s = 0; s < grads.size(); ++s) {
        set_grad(p.tensor, grads[s]);
        opt.step();
        opt.zero_grad();
        for (std::size_t k = 0; k < 2; ++k) {
            const double d = grads[s][k] + 1e-4 * w[k];
            buf[k] = s == 0 ? d : 0.9 * buf[k] + d;
            w[k] -= 0.1 * buf[k];
            EXPECT_NEAR(p.tensor[k], w[k], 1e-6);
        }
    }
}

TEST(Sgd, SkipsParametersWithoutGradient) {
    auto a = param("a", {1.0f});
    auto b = param("b", {2.0f});
    Sgd opt({a, b}, {});
    set_grad(a.tensor, {1.0f});
    opt.step();
    EXPECT_NE(a.tensor[0], 1.0f);
    EXPECT_EQ(b.tensor[0], 2.0f);
    const auto st = opt.state("opt.");
    ASSERT_EQ(st.size(), 1u);
    EXPECT_EQ(st[0].name, "opt.a.momentum");
}

TEST(Sgd, ZeroGradClearsToAbsent) {
    auto a = param("a", {1.0f, 2.0f});
    Sgd opt({a}, {});
    set_grad(a.tensor, {1.0f, 1.0f});
    opt.zero_grad();
    EXPECT_FALSE(a.tensor.has_grad());
}

TEST(Sgd, StateRoundTripContinuesIdentically) {
    auto run = [](bool reload) {
        auto p = param("w", {0.3f, -0.7f, 1.1f});
        auto opt = std::make_unique<Sgd>(std::vector<NamedTensor<float>>{p}, Sgd::Options{});
        for (int s = 0; s < 5; ++s) {
            if (reload && s == 2) {
                auto saved = opt->state("x.");
                opt = std::make_unique<Sgd>(std::vector<NamedTensor<float>>{p}, Sgd::Options{});
                opt->load_state("x.", saved);
            }
            set_grad(p.tensor, {0.1f * static_cast<float>(s), -0.2f, 0.05f});
            opt->step();
            opt->zero_grad();
        }
        return std::vector<float>(p.tensor.data().begin(), p.tensor.data().end());
    };
    EXPECT_EQ(run(false), run(true));
}

TEST(Adam, MatchesBiasCorrectedRecurrence) {
    auto p = param("w", {0.5f, -1.5f});
    Adam::Options o;
    o.lr = 1e-2;
    Adam opt({p}, o);
    std::vector<double> w{0.5, -1.5}, m{0, 0}, v{0, 0};
    const std::vector<std::vector<float>> grads{{1.0f, -0.5f}, {0.2f, 0.4f}, {-0.3f, 0.0f}, {0.7f, -0.9f}};
    for (std::size_t s = 0; s < grads.size(); ++s) {
        set_grad(p.tensor, grads[s]);
        opt.step();
        opt.zero_grad();
        const double t = static_cast<double>(s + 1);
        for (std::size_t k = 0; k < 2; ++k) {
            const double d = grads[s][k] + 0.1 * w[k];
            m[k] = 0.9 * m[k] + 0.1 * d;
            v[k] = 0.999 * v[k] + 0.001 * d * d;
            const double mh = m[k] / (1 - std::pow(0.9, t)), vh = v[k] / (1 - std::pow(0.999, t));
            w[k] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
            EXPECT_NEAR(p.tensor[k], w[k], 1e-5);
        }
    }
}

TEST(Adam, ZeroLearningRateLeavesParametersUnchanged) {
    auto p = param("w", {0.5f, -1.5f});
    Adam::Options o;
    o.lr = 0.0;
    Adam opt({p}, o);
    set_grad(p.tensor, {3.0f, 4.0f});
    opt.step();
    EXPECT_EQ(p.tensor[0], 0.5f);
    EXPECT_EQ(p.tensor[1], -1.5f);
}

TEST(Adam, StateRoundTripAndSizeChecks) {
    auto p = param("w", {0.5f, -1.5f});
    Adam opt({p}, {});
    set_grad(p.tensor, {1.0f, 2.0f});
    opt.step();
    auto st = opt.state("a.");
    ASSERT_EQ(st.size(), 3u);
    EXPECT_NE(find_array(st, "a.w.step"), nullptr);
    EXPECT_EQ(find_array(st, "a.w.step")->values[0], 1.0f);

    auto q = param("w", {0.5f, -1.5f, 2.0f});
    Adam other({q}, {});
    EXPECT_THROW(other.load_state("a.", st), StateError);
}

TEST(Optimizers, DisjointStateOverSharedParameters) {
    auto p = param("w", {1.0f});
    Sgd sgd({p}, {});
    Adam adam({p}, {});
    set_grad(p.tensor, {1.0f});
    sgd.step();
    sgd.zero_grad();
    EXPECT_TRUE(adam.state("").empty());
    set_grad(p.tensor, {1.0f});
    adam.step();
    EXPECT_EQ(sgd.state("").size(), 1u);
    EXPECT_EQ(sgd.state("")[0].values[0], 1.0f + 1e-4f * 1.0f);
}
