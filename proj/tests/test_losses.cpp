#include <gtest/gtest.h>

#include <cmath>

#include "afd/errors.hpp"
#include "afd/losses.hpp"
#include "afd/nn.hpp"
#include "test_support.hpp"

using namespace afd;
using test_util::random_tensor;

namespace {

// Plain double-precision reference of mean_b sum_c p log(p / q), p = softmax(t/T), q = softmax(s/T).
double kl_oracle(const Tensor<double>& teacher, const Tensor<double>& student, double T) {
    const std::size_t B = teacher.dim(0), C = teacher.dim(1);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> p(C), q(C);
        double zp = 0.0, zq = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            p[c] = std::exp(teacher[b * C + c] / T);
            q[c] = std::exp(student[b * C + c] / T);
            zp += p[c];
            zq += q[c];
        }
        for (std::size_t c = 0; c < C; ++c) total += p[c] / zp * std::log((p[c] / zp) / (q[c] / zq));
    }
    return total / static_cast<double>(B);
}

bool all_grads_absent_or_zero(const std::vector<NamedTensor<float>>& params) {
    for (const auto& p : params) {
        if (!p.tensor.has_grad()) continue;
        for (float g : p.tensor.grad()) {
            if (g != 0.0f) return false;
        }
    }
    return true;
}

}  // namespace

TEST(SoftenedSoftmax, SymmetricAndShiftInvariant) {
    for (double T : {0.5, 1.0, 3.0}) {
        auto two = softened_softmax(Tensor<double>({1, 2}, {0.0, 0.0}), T);
        EXPECT_DOUBLE_EQ(two.probs[0], 0.5);
        auto three = softened_softmax(Tensor<double>({1, 3}, {7.0, 7.0, 7.0}), T);
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(three.probs[c], 1.0 / 3.0, 1e-15);
    }
}

TEST(SoftenedSoftmax, TemperatureTwoHandValue) {
    auto d = softened_softmax(Tensor<double>({1, 2}, {2.0, 0.0}), 2.0);
    // e / (e + 1) at full precision
    EXPECT_NEAR(d.probs[0], 0.7310585786300049, 1e-4);
    EXPECT_NEAR(d.probs[1], 0.2689414213699951, 1e-4);
    EXPECT_EQ(d.temperature, 2.0);
}

TEST(SoftenedSoftmax, RowsAreStochasticForEveryTemperature) {
    std::mt19937_64 rng(1);
    auto z = random_tensor<float>({6, 10}, rng, -20, 20);
    for (double T : {0.5, 1.0, 3.0, 10.0}) {
        auto d = softened_softmax(z, T);
        for (std::size_t b = 0; b < 6; ++b) {
            double row = 0.0;
            for (std::size_t c = 0; c < 10; ++c) {
                const float p = d.probs[b * 10 + c];
                EXPECT_GE(p, 0.0f);
                EXPECT_LE(p, 1.0f);
                row += p;
            }
            EXPECT_NEAR(row, 1.0, 1e-5);
        }
    }
}

TEST(SoftenedSoftmax, HigherTemperatureFlattens) {
    Tensor<double> z({1, 4}, {3.0, 1.0, -0.5, 0.2});
    double prev_max = 2.0;
    for (double T : {1.0, 3.0, 10.0}) {
        auto d = softened_softmax(z, T);
        const double top = *std::max_element(d.probs.data().begin(), d.probs.data().end());
        EXPECT_LT(top, prev_max);
        prev_max = top;
    }
}

TEST(SoftenedSoftmax, NonPositiveTemperatureIsConfigError) {
    Tensor<float> z({1, 2}, {0.0f, 1.0f});
    EXPECT_THROW(softened_softmax(z, 0.0), ConfigError);
    EXPECT_THROW(softened_softmax(z, -1.0), ConfigError);
    EXPECT_THROW(kl_mimicry(z, z, 0.0), ConfigError);
}

TEST(CrossEntropy, UniformLogitsGiveLogC) {
    for (std::size_t C : {2u, 6u, 100u}) {
        Tensor<double> z = Tensor<double>::zeros({3, C});
        const std::vector<std::int32_t> labels{0, 1, 1};
        EXPECT_NEAR(cross_entropy<double>(labels, z).item(), std::log(static_cast<double>(C)), 1e-6);
    }
}

TEST(CrossEntropy, PeakedCorrectLogitsApproachZero) {
    const std::vector<std::int32_t> labels{1};
    double prev = 1e9;
    for (double margin : {1.0, 5.0, 20.0, 60.0}) {
        const double v = cross_entropy<double>(labels, Tensor<double>({1, 3}, {0.0, margin, 0.0})).item();
        EXPECT_GE(v, 0.0);
        EXPECT_LT(v, prev);
        prev = v;
    }
    EXPECT_LT(prev, 1e-20);
}

TEST(CrossEntropy, MatchesPerSampleOracle) {
    std::mt19937_64 rng(2);
    auto z = random_tensor<float>({5, 4}, rng, -4, 4);
    const std::vector<std::int32_t> labels{3, 0, 2, 2, 1};
    double oracle = 0.0;
    for (std::size_t b = 0; b < 5; ++b) {
        double denom = 0.0;
        for (std::size_t c = 0; c < 4; ++c) denom += std::exp(static_cast<double>(z[b * 4 + c]));
        oracle -= std::log(std::exp(static_cast<double>(z[b * 4 + static_cast<std::size_t>(labels[b])])) / denom);
    }
    EXPECT_NEAR(cross_entropy<float>(labels, z).item(), oracle / 5.0, 1e-6);
}

TEST(CrossEntropy, OutOfRangeLabelIsDataError) {
    Tensor<float> z = Tensor<float>::zeros({2, 3});
    const std::vector<std::int32_t> too_big{0, 3}, negative{-1, 0};
    EXPECT_THROW(cross_entropy<float>(too_big, z), DataError);
    EXPECT_THROW(cross_entropy<float>(negative, z), DataError);
}

TEST(KlMimicry, IdenticalLogitsGiveZero) {
    std::mt19937_64 rng(3);
    auto z = random_tensor<double>({4, 6}, rng, -5, 5);
    EXPECT_NEAR(kl_mimicry(z, z, 3.0).item(), 0.0, 1e-8);
    auto zf = random_tensor<float>({4, 6}, rng, -5, 5);
    EXPECT_NEAR(kl_mimicry(zf, zf, 3.0).item(), 0.0, 1e-8);
}

TEST(KlMimicry, NonNegativeAndPositiveWhenDistributionsDiffer) {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 20; ++i) {
        auto t = random_tensor<double>({3, 5}, rng, -4, 4);
        auto s = random_tensor<double>({3, 5}, rng, -4, 4);
        EXPECT_GT(kl_mimicry(t, s, 3.0).item(), 0.0);
    }
}

TEST(KlMimicry, EqualsTemperatureSquaredTimesUnscaledKl) {
    std::mt19937_64 rng(5);
    for (double T : {1.0, 3.0, 10.0}) {
        auto t = random_tensor<double>({3, 7}, rng, -5, 5);
        auto s = random_tensor<double>({3, 7}, rng, -5, 5);
        EXPECT_LE(test_util::rel_error(kl_mimicry(t, s, T).item(), T * T * kl_oracle(t, s, T)), 1e-12);
    }
}

TEST(KlMimicry, StudentGradientIsNineTimesUnscaledAtTemperatureThree) {
    // d/ds of mean_b KL(p || softmax(s/T)) is (q - p) / (T B); the loss multiplies it by T^2.
    std::mt19937_64 rng(6);
    auto t = random_tensor<double>({2, 4}, rng, -3, 3, true);
    auto s = random_tensor<double>({2, 4}, rng, -3, 3, true);
    const double T = 3.0;
    kl_mimicry(t, s, T).backward();
    auto p = softmax(t.detach(), T), q = softmax(s.detach(), T);
    for (std::size_t i = 0; i < 8; ++i) {
        const double unscaled = (q[i] - p[i]) / (T * 2.0);
        EXPECT_LE(test_util::rel_error(s.grad()[i], 9.0 * unscaled), 1e-12);
    }
    EXPECT_FALSE(t.has_grad());
}

TEST(KlMimicry, ShapeMismatchIsDimensionError) {
    EXPECT_THROW(kl_mimicry(Tensor<float>::zeros({2, 3}), Tensor<float>::zeros({2, 4}), 3.0), DimensionError);
}

TEST(KlToDistribution, MatchesMimicryWithSoftenedTeacher) {
    std::mt19937_64 rng(7);
    auto t = random_tensor<double>({3, 5}, rng, -3, 3);
    auto s = random_tensor<double>({3, 5}, rng, -3, 3);
    EXPECT_NEAR(kl_to_distribution(softmax(t, 3.0), s, 3.0).item(), kl_mimicry(t, s, 3.0).item(), 1e-12);
}

TEST(LogitLoss, IsCrossEntropyPlusMimicry) {
    std::mt19937_64 rng(8);
    const std::vector<std::int32_t> labels{1, 0, 4};
    auto own = random_tensor<float>({3, 5}, rng, -3, 3);
    auto peer = random_tensor<float>({3, 5}, rng, -3, 3);
    const double whole = logit_loss<float>(labels, own, peer, 3.0).item();
    const double parts = cross_entropy<float>(labels, own).item() + kl_mimicry(peer, own, 3.0).item();
    EXPECT_NEAR(whole, parts, 1e-6);
    EXPECT_NEAR(logit_loss<float>(labels, own, own, 3.0).item(), cross_entropy<float>(labels, own).item(), 1e-7);
}

TEST(LogitLoss, VanishesForPeakedCorrectSelfPeer) {
    const std::vector<std::int32_t> labels{0, 2};
    Tensor<double> own({2, 3}, {80.0, 0.0, 0.0, 0.0, 0.0, 80.0});
    EXPECT_LT(logit_loss<double>(labels, own, own, 3.0).item(), 1e-20);
}

TEST(Lsgan, DiscriminatorLossIdentities) {
    Tensor<double> ones = Tensor<double>::full({4}, 1.0), zeros = Tensor<double>::zeros({4});
    EXPECT_EQ(lsgan_d_loss(ones, zeros).item(), 0.0);
    Tensor<double> half = Tensor<double>::full({4}, 0.5);
    EXPECT_NEAR(lsgan_d_loss(half, half).item(), 0.5, 1e-8);
}

TEST(Lsgan, GeneratorLossIdentities) {
    EXPECT_EQ(lsgan_g_loss(Tensor<double>::full({3}, 1.0)).item(), 0.0);
    EXPECT_EQ(lsgan_g_loss(Tensor<double>::zeros({3})).item(), 1.0);
    EXPECT_NEAR(lsgan_g_loss(Tensor<double>::full({3}, 0.5)).item(), 0.25, 1e-15);
}

TEST(Lsgan, MatchesLoopOracles) {
    std::mt19937_64 rng(9);
    auto peer = random_tensor<float>({7}, rng, 0.01, 0.99);
    auto own = random_tensor<float>({7}, rng, 0.01, 0.99);
    double d = 0.0, g = 0.0;
    for (std::size_t i = 0; i < 7; ++i) {
        d += (1.0 - peer[i]) * (1.0 - peer[i]) + static_cast<double>(own[i]) * own[i];
        g += (1.0 - own[i]) * (1.0 - own[i]);
    }
    EXPECT_NEAR(lsgan_d_loss(peer, own).item(), d / 7.0, 1e-6);
    EXPECT_NEAR(lsgan_g_loss(own).item(), g / 7.0, 1e-6);
}

TEST(Lsgan, ScoresOutsideUnitIntervalViolateContract) {
    Tensor<float> ok = Tensor<float>::full({2}, 0.5f);
    Tensor<float> bad({2}, {0.5f, 1.5f});
    EXPECT_THROW(lsgan_d_loss(bad, ok), ContractError);
    EXPECT_THROW(lsgan_d_loss(ok, Tensor<float>({2}, {-0.1f, 0.2f})), ContractError);
    EXPECT_THROW(lsgan_g_loss(bad), ContractError);
    EXPECT_THROW(lsgan_d_loss(ok, Tensor<float>::full({3}, 0.5f)), DimensionError);
}

TEST(L1Alignment, HandValuesAndOracle) {
    EXPECT_EQ(l1_alignment(Tensor<float>::full({2, 3}, 1.0f), Tensor<float>::full({2, 3}, 3.0f)).item(), 2.0f);
    std::mt19937_64 rng(10);
    auto a = random_tensor<float>({2, 3, 4, 4}, rng);
    auto b = random_tensor<float>({2, 3, 4, 4}, rng);
    EXPECT_EQ(l1_alignment(a, a).item(), 0.0f);
    double oracle = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) oracle += std::abs(static_cast<double>(a[i]) - b[i]);
    EXPECT_NEAR(l1_alignment(a, b).item(), oracle / static_cast<double>(a.numel()), 1e-6);
    EXPECT_THROW(l1_alignment(a, Tensor<float>::zeros({2, 4, 4, 4})), DimensionError);
}

TEST(L1Alignment, PeerSideReceivesNoGradient) {
    std::mt19937_64 rng(11);
    auto own = random_tensor<float>({2, 4}, rng, -1, 1, true);
    auto peer = random_tensor<float>({2, 4}, rng, 2, 3, true);
    l1_alignment(own, peer).backward();
    EXPECT_TRUE(own.has_grad());
    EXPECT_FALSE(peer.has_grad());
}

// Gradient-flow isolation on real blocks: a small extractor feeding a discriminator.
TEST(GradientFlow, DiscriminatorLossNeverReachesExtractors) {
    auto own = build_network<float>("conv:4:3:1-bn-relu", 3, 1);
    auto peer = build_network<float>("conv:4:3:1-bn-relu", 3, 2);
    Discriminator<float> disc(4, 8, 3);
    std::mt19937_64 rng(12);
    auto x = random_tensor<float>({4, 1, 8, 8}, rng);
    auto f_own = own.extract(x), f_peer = peer.extract(x);
    lsgan_d_loss(disc.forward(f_peer.detach()), disc.forward(f_own.detach())).backward();
    EXPECT_TRUE(all_grads_absent_or_zero(own.parameters()));
    EXPECT_TRUE(all_grads_absent_or_zero(peer.parameters()));
    EXPECT_FALSE(all_grads_absent_or_zero(disc.parameters()));
}

TEST(GradientFlow, GeneratorLossNeverReachesDiscriminator) {
    auto own = build_network<float>("conv:4:3:1-bn-relu", 3, 1);
    Discriminator<float> disc(4, 8, 3);
    std::mt19937_64 rng(13);
    auto x = random_tensor<float>({4, 1, 8, 8}, rng);
    auto loss = lsgan_g_loss(disc.forward(own.extract(x)));
    std::vector<Tensor<float>> targets;
    for (const auto& p : own.extractor_parameters()) targets.push_back(p.tensor);
    loss.backward_to(targets);
    EXPECT_TRUE(all_grads_absent_or_zero(disc.parameters()));
    EXPECT_FALSE(all_grads_absent_or_zero(own.extractor_parameters()));
}

TEST(GradientFlow, MimicryNeverReachesTeacher) {
    auto student = build_network<float>("conv:4:3:1-bn-relu", 3, 1);
    auto teacher = build_network<float>("conv:4:3:1-bn-relu", 3, 2);
    std::mt19937_64 rng(14);
    auto x = random_tensor<float>({4, 1, 8, 8}, rng);
    kl_mimicry(teacher.forward(x).logits, student.forward(x).logits, 3.0).backward();
    EXPECT_TRUE(all_grads_absent_or_zero(teacher.parameters()));
    EXPECT_FALSE(all_grads_absent_or_zero(student.parameters()));
}
