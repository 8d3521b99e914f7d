#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "afd/ops.hpp"
#include "afd/tensor.hpp"

namespace afd {

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> tensor;
};

template <typename T>
struct NamedStats {
    std::string name;
    RunningStats<T>* stats;
};

// ---------------------------------------------------------------------------
// Architecture strings
//
//   spec   := preset | token ('-' token)*
//   token  := 'conv:' C ':' K ':' S   (C output channels, KxK kernel, stride S, padding K/2)
//           | 'bn' | 'relu' | 'pool:' P
//   preset := 'tiny-a' | 'tiny-b'
// ---------------------------------------------------------------------------

struct LayerSpec {
    enum class Kind { conv, bn, relu, pool };
    Kind kind = Kind::conv;
    std::size_t channels = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
};

struct ArchSpec {
    std::string id;
    std::vector<LayerSpec> layers;
};

/// Expands presets and parses block strings. Throws ConfigError.
ArchSpec parse_arch(const std::string& text);

/// Block string a preset expands to, or empty when `name` is not a preset.
std::string preset_blocks(const std::string& name);

/// Channel count of the last conv in the spec.
std::size_t feature_channels(const ArchSpec& spec);

// Normal init with std = sqrt(2 / fan_in).
template <typename T>
std::vector<T> fan_in_normal(std::size_t count, std::size_t fan_in, std::mt19937_64& rng);

template <typename T>
struct ConvLayer {
    Tensor<T> weight;
    Tensor<T> bias;  // undefined when the layer has no bias
    std::size_t stride = 1;
    std::size_t padding = 0;

    static ConvLayer make(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                          std::size_t padding, bool with_bias, std::mt19937_64& rng);
    Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
};

template <typename T>
struct BatchNormLayer {
    Tensor<T> gamma;
    Tensor<T> beta;
    RunningStats<T> stats;

    static BatchNormLayer make(std::size_t channels);
    Tensor<T> forward(const Tensor<T>& x, NormMode mode) { return batch_norm(x, gamma, beta, mode, &stats); }
};

struct ReluLayer {};

struct PoolLayer {
    std::size_t size = 2;
};

template <typename T>
using Layer = std::variant<ConvLayer<T>, BatchNormLayer<T>, ReluLayer, PoolLayer>;

/// Classifier split into a feature extractor (ending at the last conv stage)
/// and a head of global average pooling plus one linear layer.
template <typename T>
class Network {
public:
    struct Output {
        Tensor<T> feature;
        Tensor<T> logits;
    };

    Network(ArchSpec spec, std::size_t in_channels, std::size_t num_classes, std::uint64_t seed);

    /// One pass yielding the last-stage feature map and the logits.
    Output forward(const Tensor<T>& x);
    Tensor<T> extract(const Tensor<T>& x);
    Tensor<T> classify(const Tensor<T>& feature) const;

    void set_mode(NormMode mode) { mode_ = mode; }
    NormMode mode() const { return mode_; }

    const std::string& arch_id() const { return spec_.id; }
    const ArchSpec& arch() const { return spec_; }
    std::size_t in_channels() const { return in_channels_; }
    std::size_t num_classes() const { return num_classes_; }
    std::size_t feature_channels() const { return feature_channels_; }

    std::vector<NamedTensor<T>> extractor_parameters() const;
    std::vector<NamedTensor<T>> head_parameters() const;
    std::vector<NamedTensor<T>> parameters() const;
    std::vector<NamedStats<T>> running_stats();
    std::size_t parameter_count() const;

    /// Number of extractor passes since construction or the last reset.
    std::size_t forward_count() const { return forward_count_; }
    void reset_forward_count() { forward_count_ = 0; }

private:
    ArchSpec spec_;
    std::size_t in_channels_;
    std::size_t num_classes_;
    std::size_t feature_channels_;
    std::vector<Layer<T>> extractor_;
    Tensor<T> head_weight_;
    Tensor<T> head_bias_;
    NormMode mode_ = NormMode::train;
    std::size_t forward_count_ = 0;
};

template <typename T>
Network<T> build_network(const std::string& arch_spec, std::size_t num_classes, std::uint64_t seed,
                         std::size_t in_channels = 1);

inline constexpr double kDiscriminatorSlope = 0.2;
inline constexpr std::size_t kDiscriminatorMinExtent = 4;

/// Conv(s2) -> BN -> LeakyReLU(0.2) -> Conv(s2, one channel) -> global average pool -> sigmoid.
/// Emits one score in (0, 1) per batch element.
template <typename T>
class Discriminator {
public:
    Discriminator(std::size_t in_channels, std::size_t base_width, std::uint64_t seed);

    Tensor<T> forward(const Tensor<T>& feature);

    void set_mode(NormMode mode) { mode_ = mode; }
    std::size_t in_channels() const { return in_channels_; }
    std::vector<NamedTensor<T>> parameters() const;
    std::vector<NamedStats<T>> running_stats();

    ConvLayer<T>& first_conv() { return conv1_; }
    ConvLayer<T>& final_conv() { return conv2_; }

private:
    std::size_t in_channels_;
    ConvLayer<T> conv1_;
    BatchNormLayer<T> bn_;
    ConvLayer<T> conv2_;
    NormMode mode_ = NormMode::train;
};

template <typename T>
Discriminator<T> build_discriminator(std::size_t in_channels, std::size_t base_width, std::uint64_t seed) {
    return Discriminator<T>(in_channels, base_width, seed);
}

/// 1x1 conv -> BN -> ReLU mapping c_in channels to c_out. When the counts
/// agree the layer is an identity pass-through with no parameters.
template <typename T>
class TransferLayer {
public:
    TransferLayer(std::size_t c_in, std::size_t c_out, std::uint64_t seed);

    Tensor<T> forward(const Tensor<T>& x);

    bool is_identity() const { return identity_; }
    std::size_t in_channels() const { return c_in_; }
    std::size_t out_channels() const { return c_out_; }
    void set_mode(NormMode mode) { mode_ = mode; }
    std::vector<NamedTensor<T>> parameters() const;
    std::vector<NamedStats<T>> running_stats();

private:
    std::size_t c_in_;
    std::size_t c_out_;
    bool identity_;
    ConvLayer<T> conv_;
    BatchNormLayer<T> bn_;
    NormMode mode_ = NormMode::train;
};

template <typename T>
TransferLayer<T> build_transfer_layer(std::size_t c_in, std::size_t c_out, std::uint64_t seed) {
    return TransferLayer<T>(c_in, c_out, seed);
}

extern template class Network<float>;
extern template class Network<double>;
extern template class Discriminator<float>;
extern template class Discriminator<double>;
extern template class TransferLayer<float>;
extern template class TransferLayer<double>;

}  // namespace afd
