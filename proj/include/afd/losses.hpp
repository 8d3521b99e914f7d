#pragma once

#include <cstdint>
#include <span>

#include "afd/tensor.hpp"

namespace afd {

inline constexpr double kDefaultTemperature = 3.0;

/// Row-stochastic softmax(z / T) together with its temperature.
template <typename T>
struct SoftDistribution {
    Tensor<T> probs;
    double temperature;
};

template <typename T>
SoftDistribution<T> softened_softmax(const Tensor<T>& logits, double temperature);

/// Mean over the batch of -log softmax(z)[label].
template <typename T>
Tensor<T> cross_entropy(std::span<const std::int32_t> labels, const Tensor<T>& logits);

/// T^2 * mean_b sum_c p_c log(p_c / q_c) with p = target_probs (constant) and
/// q = softmax(student / T). Gradient reaches only the student logits.
template <typename T>
Tensor<T> kl_to_distribution(const Tensor<T>& target_probs, const Tensor<T>& student_logits, double temperature);

/// KL mimicry from teacher to student logits at temperature T, scaled by T^2.
/// The teacher side is treated as a constant.
template <typename T>
Tensor<T> kl_mimicry(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, double temperature);

/// cross_entropy(labels, own) + kl_mimicry(peer, own, T).
template <typename T>
Tensor<T> logit_loss(std::span<const std::int32_t> labels, const Tensor<T>& own_logits, const Tensor<T>& peer_logits,
                     double temperature);

/// Least-squares discriminator loss: mean of (1 - d_peer)^2 + d_own^2.
/// Scores must lie in [0, 1].
template <typename T>
Tensor<T> lsgan_d_loss(const Tensor<T>& d_peer, const Tensor<T>& d_own);

/// Least-squares generator loss: mean of (1 - d_own)^2.
template <typename T>
Tensor<T> lsgan_g_loss(const Tensor<T>& d_own);

/// Mean absolute difference; the peer side is detached.
template <typename T>
Tensor<T> l1_alignment(const Tensor<T>& f_own, const Tensor<T>& f_peer);

}  // namespace afd
