#pragma once

#include <type_traits>
#include <vector>

#include "afd/tensor.hpp"

namespace afd {

enum class NormMode { train, eval };

/// Per-channel running statistics maintained by batch_norm in train mode.
/// `populated` is false until values exist that eval mode may rely on.
template <typename T>
struct RunningStats {
    std::vector<T> mean;
    std::vector<T> var;
    bool populated = false;

    static RunningStats initialized(std::size_t channels) {
        return {std::vector<T>(channels, T(0)), std::vector<T>(channels, T(1)), true};
    }
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

// x[B,F_in] * weight[F_out,F_in]^T + bias[F_out]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Cross-correlation over x[B,C_in,H,W] with kernel[C_out,C_in,kH,kW].
/// `bias` may be an undefined tensor; otherwise it has shape [C_out].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride, std::size_t padding) {
    return conv2d(x, kernel, Tensor<T>{}, stride, padding);
}

/// Per-channel normalization of x[B,C,H,W]. Train mode uses batch statistics
/// and, when `stats` is given, folds them into it by exponential moving
/// average. Eval mode reads `stats` and throws StateError when it is missing
/// or unpopulated.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormMode mode,
                     std::type_identity_t<RunningStats<T>>* stats, double eps = kBatchNormEps, double momentum = kBatchNormMomentum);

enum class ActivationKind { relu, leaky_relu, sigmoid };

struct Activation {
    ActivationKind kind = ActivationKind::relu;
    double slope = 0.0;  // leaky_relu only, in [0, 1)
};

template <typename T>
Tensor<T> activate(const Activation& act, const Tensor<T>& x);

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
    return activate({ActivationKind::relu, 0.0}, x);
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, double slope) {
    return activate({ActivationKind::leaky_relu, slope}, x);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return activate({ActivationKind::sigmoid, 0.0}, x);
}

/// x[B,C,H,W] -> [B,C], mean over spatial positions.
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

/// Non-overlapping max pooling with window = stride = `size`; trailing rows
/// and columns that do not fill a window are dropped.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t size);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

/// a*x + b elementwise, with constant scalars.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, double a, double b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, double c) {
    return affine(x, c, 0.0);
}

template <typename T>
Tensor<T> square(const Tensor<T>& x);
template <typename T>
Tensor<T> abs(const Tensor<T>& x);

/// Sum of all elements, shape [1].
template <typename T>
Tensor<T> sum(const Tensor<T>& x);
/// Mean of all elements, shape [1].
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

/// Row-wise log(softmax(z / temperature)) over z[B,C], max-subtracted.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& z, double temperature = 1.0);
/// Row-wise softmax(z / temperature) over z[B,C], max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& z, double temperature = 1.0);

}  // namespace afd
