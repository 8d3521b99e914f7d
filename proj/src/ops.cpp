#include "afd/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "afd/errors.hpp"

namespace afd {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using GradSlots = std::span<std::vector<T>* const>;

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
    if (s.size() != rank) {
        throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                             shape_str(s));
    }
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

struct ConvGeometry {
    std::size_t batch, in_c, h, w, out_c, kh, kw, stride, pad, oh, ow;

    std::size_t patch() const { return in_c * kh * kw; }
    std::size_t out_plane() const { return oh * ow; }
};

// Valid output range [lo, hi) along one axis for kernel offset k.
inline void valid_range(std::size_t k, std::size_t stride, std::size_t pad, std::size_t extent, std::size_t out,
                        std::size_t& lo, std::size_t& hi) {
    // need 0 <= o*stride + k - pad < extent
    lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
    const std::size_t limit = extent + pad - k;  // o*stride < limit
    hi = k >= extent + pad ? 0 : std::min(out, (limit + stride - 1) / stride);
    if (lo > hi) lo = hi;
}

// col[(c*kh + i)*kw + j, oy*ow + ox] = x[c, oy*s + i - p, ox*s + j - p] (zero outside).
// Rows are ld apart so a batch can share one matrix.
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col, std::size_t ld) {
    for (std::size_t c = 0; c < g.in_c; ++c) {
        const T* xc = x + c * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
            std::size_t ylo, yhi;
            valid_range(i, g.stride, g.pad, g.h, g.oh, ylo, yhi);
            for (std::size_t j = 0; j < g.kw; ++j) {
                std::size_t xlo, xhi;
                valid_range(j, g.stride, g.pad, g.w, g.ow, xlo, xhi);
                T* row = col + ((c * g.kh + i) * g.kw + j) * ld;
                std::fill(row, row + ylo * g.ow, T(0));
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    T* out = row + oy * g.ow;
                    const T* src = xc + (oy * g.stride + i - g.pad) * g.w;
                    std::fill(out, out + xlo, T(0));
                    if (g.stride == 1) {
                        std::copy(src + xlo + j - g.pad, src + xhi + j - g.pad, out + xlo);
                    } else {
                        for (std::size_t ox = xlo; ox < xhi; ++ox) out[ox] = src[ox * g.stride + j - g.pad];
                    }
                    std::fill(out + xhi, out + g.ow, T(0));
                }
                std::fill(row + yhi * g.ow, row + g.oh * g.ow, T(0));
            }
        }
    }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::size_t ld, T* dx) {
    for (std::size_t c = 0; c < g.in_c; ++c) {
        T* dxc = dx + c * g.h * g.w;
        for (std::size_t i = 0; i < g.kh; ++i) {
            std::size_t ylo, yhi;
            valid_range(i, g.stride, g.pad, g.h, g.oh, ylo, yhi);
            for (std::size_t j = 0; j < g.kw; ++j) {
                std::size_t xlo, xhi;
                valid_range(j, g.stride, g.pad, g.w, g.ow, xlo, xhi);
                const T* row = col + ((c * g.kh + i) * g.kw + j) * ld;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    const T* in = row + oy * g.ow;
                    T* dst = dxc + (oy * g.stride + i - g.pad) * g.w + j - g.pad;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox * g.stride] += in[ox];
                }
            }
        }
    }
}

template <typename T, typename F, typename DF>
Tensor<T> elementwise(const Tensor<T>& x, F f, DF df, const char* op) {
    auto xv = x.buffer();
    std::vector<T> out(xv->size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f((*xv)[i]);
    return Tensor<T>::make_result(
        x.shape(), std::move(out), {x},
        [xv, df](std::span<const T> g, GradSlots<T> gin) {
            auto& dx = *gin[0];
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * df((*xv)[i]);
        },
        op);
}

}  // namespace

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank(x.shape(), 2, "linear", "input");
    require_rank(weight.shape(), 2, "linear", "weight");
    require_rank(bias.shape(), 1, "linear", "bias");
    const std::size_t batch = x.dim(0), in = x.dim(1), out = weight.dim(0);
    if (weight.dim(1) != in) {
        throw DimensionError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                             shape_str(weight.shape()));
    }
    if (bias.dim(0) != out) throw DimensionError("linear: bias " + shape_str(bias.shape()) + " expected [" +
                                                 std::to_string(out) + "]");

    auto xv = x.buffer();
    auto wv = weight.buffer();
    auto bv = bias.buffer();
    std::vector<T> result(batch * out);
    {
        ConstMapMat<T> X(xv->data(), batch, in);
        ConstMapMat<T> W(wv->data(), out, in);
        MapMat<T> Y(result.data(), batch, out);
        Y.noalias() = X * W.transpose();
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t o = 0; o < out; ++o) Y(b, o) += (*bv)[o];
    }
    return Tensor<T>::make_result(
        {batch, out}, std::move(result), {x, weight, bias},
        [xv, wv, batch, in, out](std::span<const T> g, GradSlots<T> gin) {
            ConstMapMat<T> G(g.data(), batch, out);
            if (gin[0]) {
                MapMat<T> dX(gin[0]->data(), batch, in);
                dX.noalias() += G * ConstMapMat<T>(wv->data(), out, in);
            }
            if (gin[1]) {
                MapMat<T> dW(gin[1]->data(), out, in);
                dW.noalias() += G.transpose() * ConstMapMat<T>(xv->data(), batch, in);
            }
            if (gin[2]) {
                auto& db = *gin[2];
                for (std::size_t b = 0; b < batch; ++b)
                    for (std::size_t o = 0; o < out; ++o) db[o] += G(b, o);
            }
        },
        "linear");
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
    require_rank(x.shape(), 4, "conv2d", "input");
    require_rank(kernel.shape(), 4, "conv2d", "kernel");
    if (stride == 0) throw DimensionError("conv2d: stride must be positive");
    ConvGeometry g{};
    g.batch = x.dim(0);
    g.in_c = x.dim(1);
    g.h = x.dim(2);
    g.w = x.dim(3);
    g.out_c = kernel.dim(0);
    g.kh = kernel.dim(2);
    g.kw = kernel.dim(3);
    g.stride = stride;
    g.pad = padding;
    if (kernel.dim(1) != g.in_c) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                             std::to_string(kernel.dim(1)) + " input channels, input has " + std::to_string(g.in_c));
    }
    if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
        throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                             shape_str(x.shape()));
    }
    const bool has_bias = bias.defined();
    if (has_bias && (bias.rank() != 1 || bias.dim(0) != g.out_c)) {
        throw DimensionError("conv2d: bias " + shape_str(bias.shape()) + " expected [" + std::to_string(g.out_c) + "]");
    }
    g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
    g.ow = (g.w + 2 * padding - g.kw) / stride + 1;

    auto xv = x.buffer();
    auto kv = kernel.buffer();
    const std::size_t in_plane = g.in_c * g.h * g.w;
    const std::size_t out_plane = g.out_c * g.out_plane();
    std::vector<T> result(g.batch * out_plane);
    {
        // One GEMM over the whole batch: [out_c, patch] x [patch, batch*plane].
        const std::size_t plane = g.out_plane(), ld = g.batch * plane;
        std::vector<T> col(g.patch() * ld);
        for (std::size_t b = 0; b < g.batch; ++b) im2col(g, xv->data() + b * in_plane, col.data() + b * plane, ld);
        std::vector<T> y(g.out_c * ld);
        MapMat<T>(y.data(), g.out_c, ld).noalias() =
            ConstMapMat<T>(kv->data(), g.out_c, g.patch()) * ConstMapMat<T>(col.data(), g.patch(), ld);
        for (std::size_t b = 0; b < g.batch; ++b) {
            for (std::size_t o = 0; o < g.out_c; ++o) {
                const T* src = y.data() + o * ld + b * plane;
                T* dst = result.data() + b * out_plane + o * plane;
                const T shift = has_bias ? bias.data()[o] : T(0);
                for (std::size_t p = 0; p < plane; ++p) dst[p] = src[p] + shift;
            }
        }
    }

    std::vector<Tensor<T>> inputs{x, kernel};
    if (has_bias) inputs.push_back(bias);
    return Tensor<T>::make_result(
        {g.batch, g.out_c, g.oh, g.ow}, std::move(result), std::move(inputs),
        [xv, kv, g, has_bias, in_plane, out_plane](std::span<const T> grad, GradSlots<T> gin) {
            const std::size_t plane = g.out_plane(), ld = g.batch * plane;
            // Gradient regrouped as [out_c, batch*plane] to match the forward GEMM.
            std::vector<T> gy(g.out_c * ld);
            for (std::size_t b = 0; b < g.batch; ++b)
                for (std::size_t o = 0; o < g.out_c; ++o)
                    std::copy_n(grad.data() + b * out_plane + o * plane, plane, gy.data() + o * ld + b * plane);
            ConstMapMat<T> G(gy.data(), g.out_c, ld);
            std::vector<T> col(g.patch() * ld);
            if (gin[1]) {
                for (std::size_t b = 0; b < g.batch; ++b)
                    im2col(g, xv->data() + b * in_plane, col.data() + b * plane, ld);
                MapMat<T>(gin[1]->data(), g.out_c, g.patch()).noalias() +=
                    G * ConstMapMat<T>(col.data(), g.patch(), ld).transpose();
            }
            if (gin[0]) {
                MapMat<T>(col.data(), g.patch(), ld).noalias() =
                    ConstMapMat<T>(kv->data(), g.out_c, g.patch()).transpose() * G;
                for (std::size_t b = 0; b < g.batch; ++b)
                    col2im_add(g, col.data() + b * plane, ld, gin[0]->data() + b * in_plane);
            }
            if (has_bias && gin[2]) {
                auto& db = *gin[2];
                for (std::size_t o = 0; o < g.out_c; ++o) db[o] += G.row(o).sum();
            }
        },
        "conv2d");
}

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, NormMode mode,
                     std::type_identity_t<RunningStats<T>>* stats, double eps, double momentum) {
    require_rank(x.shape(), 4, "batch_norm", "input");
    const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
        throw DimensionError("batch_norm: affine parameters must have shape [" + std::to_string(channels) + "]");
    }
    const std::size_t count = batch * plane;
    auto xv = x.buffer();
    auto gv = gamma.buffer();
    auto bv = beta.buffer();

    std::vector<T> mean_c(channels), inv_std(channels);
    if (mode == NormMode::eval) {
        if (stats == nullptr || !stats->populated) {
            throw StateError("batch_norm: eval mode requires populated running statistics");
        }
        if (stats->mean.size() != channels || stats->var.size() != channels) {
            throw DimensionError("batch_norm: running statistics do not match channel count");
        }
        for (std::size_t c = 0; c < channels; ++c) {
            mean_c[c] = stats->mean[c];
            inv_std[c] = T(1) / std::sqrt(stats->var[c] + T(eps));
        }
    } else {
        std::vector<T> var_c(channels);
        for (std::size_t c = 0; c < channels; ++c) {
            T acc = 0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* p = xv->data() + (b * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            }
            const T m = acc / T(count);
            T sq = 0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* p = xv->data() + (b * channels + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
            }
            mean_c[c] = m;
            var_c[c] = sq / T(count);
            inv_std[c] = T(1) / std::sqrt(var_c[c] + T(eps));
        }
        if (stats != nullptr) {
            if (!stats->populated) *stats = RunningStats<T>::initialized(channels);
            const T mo = T(momentum);
            for (std::size_t c = 0; c < channels; ++c) {
                const T unbiased = count > 1 ? var_c[c] * T(count) / T(count - 1) : var_c[c];
                stats->mean[c] = (T(1) - mo) * stats->mean[c] + mo * mean_c[c];
                stats->var[c] = (T(1) - mo) * stats->var[c] + mo * unbiased;
            }
        }
    }

    auto xhat = std::make_shared<std::vector<T>>(xv->size());
    std::vector<T> out(xv->size());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < channels; ++c) {
            const std::size_t base = (b * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const T h = ((*xv)[base + i] - mean_c[c]) * inv_std[c];
                (*xhat)[base + i] = h;
                out[base + i] = (*gv)[c] * h + (*bv)[c];
            }
        }
    }

    const bool train = mode == NormMode::train;
    return Tensor<T>::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [xhat, gv, inv_std, batch, channels, plane, count, train](std::span<const T> g, GradSlots<T> gin) {
            for (std::size_t c = 0; c < channels; ++c) {
                T sum_g = 0, sum_gx = 0;
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t base = (b * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        sum_g += g[base + i];
                        sum_gx += g[base + i] * (*xhat)[base + i];
                    }
                }
                if (gin[1]) (*gin[1])[c] += sum_gx;
                if (gin[2]) (*gin[2])[c] += sum_g;
                if (!gin[0]) continue;
                auto& dx = *gin[0];
                const T scale_c = (*gv)[c] * inv_std[c];
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t base = (b * channels + c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        if (train) {
                            dx[base + i] += scale_c * (g[base + i] - sum_g / T(count) -
                                                       (*xhat)[base + i] * sum_gx / T(count));
                        } else {
                            dx[base + i] += scale_c * g[base + i];
                        }
                    }
                }
            }
        },
        "batch_norm");
}

template <typename T>
Tensor<T> activate(const Activation& act, const Tensor<T>& x) {
    switch (act.kind) {
        case ActivationKind::relu:
            return elementwise(
                x, [](T v) { return v > T(0) ? v : T(0); }, [](T v) { return v > T(0) ? T(1) : T(0); }, "relu");
        case ActivationKind::leaky_relu: {
            if (!(act.slope >= 0.0 && act.slope < 1.0)) {
                throw ConfigError("leaky_relu slope must lie in [0, 1), got " + std::to_string(act.slope));
            }
            const T s = T(act.slope);
            return elementwise(
                x, [s](T v) { return v > T(0) ? v : s * v; }, [s](T v) { return v > T(0) ? T(1) : s; },
                "leaky_relu");
        }
        case ActivationKind::sigmoid: {
            auto xv = x.buffer();
            auto out = std::make_shared<std::vector<T>>(xv->size());
            for (std::size_t i = 0; i < out->size(); ++i) {
                const T v = (*xv)[i];
                // Split by sign so exp never overflows.
                (*out)[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
            }
            std::vector<T> values = *out;
            return Tensor<T>::make_result(
                x.shape(), std::move(values), {x},
                [out](std::span<const T> g, GradSlots<T> gin) {
                    auto& dx = *gin[0];
                    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (*out)[i] * (T(1) - (*out)[i]);
                },
                "sigmoid");
        }
    }
    throw ConfigError("unknown activation kind");
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
    require_rank(x.shape(), 4, "global_avg_pool", "input");
    const std::size_t rows = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
    auto xv = x.buffer();
    std::vector<T> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        T acc = 0;
        for (std::size_t i = 0; i < plane; ++i) acc += (*xv)[r * plane + i];
        out[r] = acc / T(plane);
    }
    return Tensor<T>::make_result(
        {x.dim(0), x.dim(1)}, std::move(out), {x},
        [rows, plane](std::span<const T> g, GradSlots<T> gin) {
            auto& dx = *gin[0];
            for (std::size_t r = 0; r < rows; ++r) {
                const T share = g[r] / T(plane);
                for (std::size_t i = 0; i < plane; ++i) dx[r * plane + i] += share;
            }
        },
        "global_avg_pool");
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t size) {
    require_rank(x.shape(), 4, "max_pool2d", "input");
    if (size == 0) throw DimensionError("max_pool2d: window must be positive");
    const std::size_t rows = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
    if (h < size || w < size) {
        throw DimensionError("max_pool2d: window " + std::to_string(size) + " larger than input " + shape_str(x.shape()));
    }
    const std::size_t oh = h / size, ow = w / size;
    auto xv = x.buffer();
    std::vector<T> out(rows * oh * ow);
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = r * h * w + oy * size * w + ox * size;
                for (std::size_t i = 0; i < size; ++i) {
                    for (std::size_t j = 0; j < size; ++j) {
                        const std::size_t idx = r * h * w + (oy * size + i) * w + ox * size + j;
                        if ((*xv)[idx] > (*xv)[best]) best = idx;
                    }
                }
                const std::size_t o = (r * oh + oy) * ow + ox;
                out[o] = (*xv)[best];
                (*argmax)[o] = best;
            }
        }
    }
    return Tensor<T>::make_result(
        {x.dim(0), x.dim(1), oh, ow}, std::move(out), {x},
        [argmax](std::span<const T> g, GradSlots<T> gin) {
            auto& dx = *gin[0];
            for (std::size_t o = 0; o < g.size(); ++o) dx[(*argmax)[o]] += g[o];
        },
        "max_pool2d");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    std::vector<T> values(x.data().begin(), x.data().end());
    return Tensor<T>::make_result(
        std::move(shape), std::move(values), {x},
        [](std::span<const T> g, GradSlots<T> gin) {
            auto& dx = *gin[0];
            for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
        },
        "reshape");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    return Tensor<T>::make_result(
        a.shape(), std::move(out), {a, b},
        [](std::span<const T> g, GradSlots<T> gin) {
            for (auto* slot : gin) {
                if (!slot) continue;
                for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
            }
        },
        "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    return Tensor<T>::make_result(
        a.shape(), std::move(out), {a, b},
        [](std::span<const T> g, GradSlots<T> gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i];
            if (gin[1])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] -= g[i];
        },
        "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    auto av = a.buffer();
    auto bv = b.buffer();
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*av)[i] * (*bv)[i];
    return Tensor<T>::make_result(
        a.shape(), std::move(out), {a, b},
        [av, bv](std::span<const T> g, GradSlots<T> gin) {
            if (gin[0])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[0])[i] += g[i] * (*bv)[i];
            if (gin[1])
                for (std::size_t i = 0; i < g.size(); ++i) (*gin[1])[i] += g[i] * (*av)[i];
        },
        "mul");
}

template <typename T>
Tensor<T> affine(const Tensor<T>& x, double a, double b) {
    const T ta = T(a), tb = T(b);
    return elementwise(
        x, [ta, tb](T v) { return ta * v + tb; }, [ta](T) { return ta; }, "affine");
}

template <typename T>
Tensor<T> square(const Tensor<T>& x) {
    return elementwise(
        x, [](T v) { return v * v; }, [](T v) { return T(2) * v; }, "square");
}

template <typename T>
Tensor<T> abs(const Tensor<T>& x) {
    // Subgradient 0 at the kink.
    return elementwise(
        x, [](T v) { return std::abs(v); }, [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); },
        "abs");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
    T acc = 0;
    for (T v : x.data()) acc += v;
    return Tensor<T>::make_result(
        {1}, {acc}, {x},
        [](std::span<const T> g, GradSlots<T> gin) {
            for (auto& v : *gin[0]) v += g[0];
        },
        "sum");
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
    const std::size_t n = x.numel();
    T acc = 0;
    for (T v : x.data()) acc += v;
    return Tensor<T>::make_result(
        {1}, {acc / T(n)}, {x},
        [n](std::span<const T> g, GradSlots<T> gin) {
            const T share = g[0] / T(n);
            for (auto& v : *gin[0]) v += share;
        },
        "mean");
}

namespace {

void require_temperature(double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw ConfigError("temperature must be positive, got " + std::to_string(temperature));
    }
}

// Row-wise softmax of z / t, max-subtracted; also returns log-probabilities.
template <typename T>
void softmax_rows(std::span<const T> z, std::size_t rows, std::size_t cols, T t, std::vector<T>& prob,
                  std::vector<T>& logp) {
    prob.resize(z.size());
    logp.resize(z.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const T* zr = z.data() + r * cols;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t c = 0; c < cols; ++c) mx = std::max(mx, zr[c] / t);
        T denom = 0;
        for (std::size_t c = 0; c < cols; ++c) denom += std::exp(zr[c] / t - mx);
        const T log_denom = std::log(denom);
        for (std::size_t c = 0; c < cols; ++c) {
            const T lp = zr[c] / t - mx - log_denom;
            logp[r * cols + c] = lp;
            prob[r * cols + c] = std::exp(lp);
        }
    }
}

}  // namespace

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& z, double temperature) {
    require_temperature(temperature);
    require_rank(z.shape(), 2, "log_softmax", "logits");
    const std::size_t rows = z.dim(0), cols = z.dim(1);
    auto prob = std::make_shared<std::vector<T>>();
    std::vector<T> logp;
    softmax_rows(z.data(), rows, cols, T(temperature), *prob, logp);
    const T t = T(temperature);
    return Tensor<T>::make_result(
        z.shape(), std::move(logp), {z},
        [prob, rows, cols, t](std::span<const T> g, GradSlots<T> gin) {
            auto& dz = *gin[0];
            for (std::size_t r = 0; r < rows; ++r) {
                T gs = 0;
                for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    dz[i] += (g[i] - (*prob)[i] * gs) / t;
                }
            }
        },
        "log_softmax");
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& z, double temperature) {
    require_temperature(temperature);
    require_rank(z.shape(), 2, "softmax", "logits");
    const std::size_t rows = z.dim(0), cols = z.dim(1);
    auto prob = std::make_shared<std::vector<T>>();
    std::vector<T> logp;
    softmax_rows(z.data(), rows, cols, T(temperature), *prob, logp);
    std::vector<T> values = *prob;
    const T t = T(temperature);
    return Tensor<T>::make_result(
        z.shape(), std::move(values), {z},
        [prob, rows, cols, t](std::span<const T> g, GradSlots<T> gin) {
            auto& dz = *gin[0];
            for (std::size_t r = 0; r < rows; ++r) {
                T dot = 0;
                for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * (*prob)[r * cols + c];
                for (std::size_t c = 0; c < cols; ++c) {
                    const std::size_t i = r * cols + c;
                    dz[i] += (*prob)[i] * (g[i] - dot) / t;
                }
            }
        },
        "softmax");
}

#define AFD_INSTANTIATE_OPS(T)                                                                                     \
    template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                              \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t);    \
    template Tensor<T> batch_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, NormMode,                  \
                                  std::type_identity_t<RunningStats<T>>*, double, double);                                               \
    template Tensor<T> activate(const Activation&, const Tensor<T>&);                                              \
    template Tensor<T> global_avg_pool(const Tensor<T>&);                                                          \
    template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t);                                                  \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                                           \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                                    \
    template Tensor<T> affine(const Tensor<T>&, double, double);                                                   \
    template Tensor<T> square(const Tensor<T>&);                                                                   \
    template Tensor<T> abs(const Tensor<T>&);                                                                      \
    template Tensor<T> sum(const Tensor<T>&);                                                                      \
    template Tensor<T> mean(const Tensor<T>&);                                                                     \
    template Tensor<T> log_softmax(const Tensor<T>&, double);                                                      \
    template Tensor<T> softmax(const Tensor<T>&, double);

AFD_INSTANTIATE_OPS(float)
AFD_INSTANTIATE_OPS(double)

#undef AFD_INSTANTIATE_OPS

}  // namespace afd
