#include "afd/losses.hpp"

#include <cmath>
#include <string>

#include "afd/errors.hpp"
#include "afd/ops.hpp"

namespace afd {

namespace {

template <typename T>
void require_scores(const Tensor<T>& d, const char* what) {
    if (d.rank() != 1) throw DimensionError(std::string(what) + " must be a per-sample vector, got " + shape_str(d.shape()));
    for (T v : d.data()) {
        if (v < T(0) || v > T(1)) {
            throw ContractError(std::string(what) + " outside [0, 1]: " + std::to_string(static_cast<double>(v)));
        }
    }
}

}  // namespace

template <typename T>
SoftDistribution<T> softened_softmax(const Tensor<T>& logits, double temperature) {
    return {softmax(logits, temperature), temperature};
}

template <typename T>
Tensor<T> cross_entropy(std::span<const std::int32_t> labels, const Tensor<T>& logits) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [B,C], got " + shape_str(logits.shape()));
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != batch) {
        throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(batch));
    }
    std::vector<T> one_hot(batch * classes, T(0));
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
            throw DataError("cross_entropy: label " + std::to_string(labels[b]) + " outside [0, " +
                            std::to_string(classes) + ")");
        }
        one_hot[b * classes + static_cast<std::size_t>(labels[b])] = T(1);
    }
    Tensor<T> picked = mul(log_softmax(logits, 1.0), Tensor<T>(logits.shape(), std::move(one_hot)));
    return scale(sum(picked), -1.0 / static_cast<double>(batch));
}

namespace {

// T^2 / B * sum p (log p - log q) with q = softmax(student / T).
template <typename T>
Tensor<T> scaled_kl(const Tensor<T>& p, std::vector<T> log_p, const Tensor<T>& student_logits, double temperature) {
    const std::size_t batch = student_logits.dim(0);
    std::vector<T> plogp(p.numel());
    for (std::size_t i = 0; i < plogp.size(); ++i) {
        const T pi = p.data()[i];
        plogp[i] = pi > T(0) ? pi * log_p[i] : T(0);
    }
    Tensor<T> cross = mul(p, log_softmax(student_logits, temperature));
    Tensor<T> kl = sub(Tensor<T>(p.shape(), std::move(plogp)), cross);
    return scale(sum(kl), temperature * temperature / static_cast<double>(batch));
}

}  // namespace

template <typename T>
Tensor<T> kl_to_distribution(const Tensor<T>& target_probs, const Tensor<T>& student_logits, double temperature) {
    if (target_probs.shape() != student_logits.shape() || student_logits.rank() != 2) {
        throw DimensionError("kl: shape mismatch " + shape_str(target_probs.shape()) + " vs " +
                             shape_str(student_logits.shape()));
    }
    Tensor<T> p = target_probs.detach();
    std::vector<T> log_p(p.numel());
    for (std::size_t i = 0; i < log_p.size(); ++i) log_p[i] = p.data()[i] > T(0) ? std::log(p.data()[i]) : T(0);
    return scaled_kl(p, std::move(log_p), student_logits, temperature);
}

template <typename T>
Tensor<T> kl_mimicry(const Tensor<T>& teacher_logits, const Tensor<T>& student_logits, double temperature) {
    if (teacher_logits.shape() != student_logits.shape() || student_logits.rank() != 2) {
        throw DimensionError("kl_mimicry: shape mismatch " + shape_str(teacher_logits.shape()) + " vs " +
                             shape_str(student_logits.shape()));
    }
    Tensor<T> log_p;
    {
        NoGradGuard no_grad;
        log_p = log_softmax(teacher_logits.detach(), temperature);
    }
    // Same log-softmax path as the student side, so identical logits give exactly zero.
    std::vector<T> log_values(log_p.data().begin(), log_p.data().end());
    std::vector<T> probs(log_values.size());
    for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = std::exp(log_values[i]);
    return scaled_kl(Tensor<T>(log_p.shape(), std::move(probs)), std::move(log_values), student_logits, temperature);
}

template <typename T>
Tensor<T> logit_loss(std::span<const std::int32_t> labels, const Tensor<T>& own_logits, const Tensor<T>& peer_logits,
                     double temperature) {
    return add(cross_entropy(labels, own_logits), kl_mimicry(peer_logits, own_logits, temperature));
}

template <typename T>
Tensor<T> lsgan_d_loss(const Tensor<T>& d_peer, const Tensor<T>& d_own) {
    require_scores(d_peer, "lsgan_d_loss: d_peer");
    require_scores(d_own, "lsgan_d_loss: d_own");
    if (d_peer.shape() != d_own.shape()) throw DimensionError("lsgan_d_loss: batch size mismatch");
    Tensor<T> real_term = square(affine(d_peer, -1.0, 1.0));
    Tensor<T> fake_term = square(d_own);
    return mean(add(real_term, fake_term));
}

template <typename T>
Tensor<T> lsgan_g_loss(const Tensor<T>& d_own) {
    require_scores(d_own, "lsgan_g_loss: d_own");
    return mean(square(affine(d_own, -1.0, 1.0)));
}

template <typename T>
Tensor<T> l1_alignment(const Tensor<T>& f_own, const Tensor<T>& f_peer) {
    if (f_own.shape() != f_peer.shape()) {
        throw DimensionError("l1_alignment: shape mismatch " + shape_str(f_own.shape()) + " vs " +
                             shape_str(f_peer.shape()));
    }
    return mean(abs(sub(f_own, f_peer.detach())));
}

#define AFD_INSTANTIATE_LOSSES(T)                                                                              \
    template SoftDistribution<T> softened_softmax(const Tensor<T>&, double);                                   \
    template Tensor<T> cross_entropy(std::span<const std::int32_t>, const Tensor<T>&);                         \
    template Tensor<T> kl_to_distribution(const Tensor<T>&, const Tensor<T>&, double);                         \
    template Tensor<T> kl_mimicry(const Tensor<T>&, const Tensor<T>&, double);                                 \
    template Tensor<T> logit_loss(std::span<const std::int32_t>, const Tensor<T>&, const Tensor<T>&, double); \
    template Tensor<T> lsgan_d_loss(const Tensor<T>&, const Tensor<T>&);                                       \
    template Tensor<T> lsgan_g_loss(const Tensor<T>&);                                                         \
    template Tensor<T> l1_alignment(const Tensor<T>&, const Tensor<T>&);

AFD_INSTANTIATE_LOSSES(float)
AFD_INSTANTIATE_LOSSES(double)

#undef AFD_INSTANTIATE_LOSSES

}  // namespace afd
