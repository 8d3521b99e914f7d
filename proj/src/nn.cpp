#include "afd/nn.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "afd/errors.hpp"

namespace afd {

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> parts;
    std::string current;
    std::istringstream is(text);
    while (std::getline(is, current, sep)) parts.push_back(current);
    if (!text.empty() && text.back() == sep) parts.emplace_back();
    return parts;
}

std::size_t parse_positive(const std::string& field, const std::string& token) {
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || ptr != field.data() + field.size() || value == 0) {
        throw ConfigError("architecture token '" + token + "': expected a positive integer, got '" + field + "'");
    }
    return value;
}

}  // namespace

std::string preset_blocks(const std::string& name) {
    if (name == "tiny-a") return "conv:8:3:1-bn-relu-pool:2-conv:16:3:1-bn-relu-pool:2-conv:32:3:1-bn-relu";
    if (name == "tiny-b") return "conv:16:3:1-bn-relu-pool:2-conv:32:3:1-bn-relu-pool:2-conv:64:3:1-bn-relu";
    return {};
}

ArchSpec parse_arch(const std::string& text) {
    ArchSpec spec;
    spec.id = text;
    std::string blocks = preset_blocks(text);
    if (blocks.empty()) blocks = text;
    if (blocks.empty()) throw ConfigError("empty architecture spec");

    std::size_t channels = 0;
    for (const std::string& token : split(blocks, '-')) {
        auto fields = split(token, ':');
        if (token.empty() || fields.empty()) throw ConfigError("architecture '" + text + "': empty token");
        LayerSpec layer;
        if (fields[0] == "conv") {
            if (fields.size() != 4) throw ConfigError("architecture token '" + token + "': expected conv:C:K:S");
            layer.kind = LayerSpec::Kind::conv;
            layer.channels = parse_positive(fields[1], token);
            layer.kernel = parse_positive(fields[2], token);
            layer.stride = parse_positive(fields[3], token);
            channels = layer.channels;
        } else if (fields[0] == "bn" && fields.size() == 1) {
            if (channels == 0) throw ConfigError("architecture '" + text + "': bn before any conv");
            layer.kind = LayerSpec::Kind::bn;
            layer.channels = channels;
        } else if (fields[0] == "relu" && fields.size() == 1) {
            layer.kind = LayerSpec::Kind::relu;
        } else if (fields[0] == "pool") {
            if (fields.size() != 2) throw ConfigError("architecture token '" + token + "': expected pool:P");
            layer.kind = LayerSpec::Kind::pool;
            layer.kernel = parse_positive(fields[1], token);
        } else {
            throw ConfigError("architecture '" + text + "': unknown token '" + token + "'");
        }
        spec.layers.push_back(layer);
    }
    if (channels == 0) throw ConfigError("architecture '" + text + "' has no conv layer");
    return spec;
}

std::size_t feature_channels(const ArchSpec& spec) {
    std::size_t channels = 0;
    for (const auto& layer : spec.layers) {
        if (layer.kind == LayerSpec::Kind::conv) channels = layer.channels;
    }
    return channels;
}

template <typename T>
std::vector<T> fan_in_normal(std::size_t count, std::size_t fan_in, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    std::vector<T> values(count);
    for (auto& v : values) v = static_cast<T>(dist(rng));
    return values;
}

template <typename T>
ConvLayer<T> ConvLayer<T>::make(std::size_t in_c, std::size_t out_c, std::size_t kernel, std::size_t stride,
                                std::size_t padding, bool with_bias, std::mt19937_64& rng) {
    ConvLayer layer;
    const std::size_t fan_in = in_c * kernel * kernel;
    layer.weight = Tensor<T>({out_c, in_c, kernel, kernel}, fan_in_normal<T>(out_c * fan_in, fan_in, rng), true);
    if (with_bias) layer.bias = Tensor<T>::zeros({out_c}, true);
    layer.stride = stride;
    layer.padding = padding;
    return layer;
}

template <typename T>
BatchNormLayer<T> BatchNormLayer<T>::make(std::size_t channels) {
    return {Tensor<T>::full({channels}, T(1), true), Tensor<T>::zeros({channels}, true),
            RunningStats<T>::initialized(channels)};
}

template <typename T>
Network<T>::Network(ArchSpec spec, std::size_t in_channels, std::size_t num_classes, std::uint64_t seed)
    : spec_(std::move(spec)), in_channels_(in_channels), num_classes_(num_classes) {
    if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
    if (in_channels == 0) throw ConfigError("in_channels must be positive");
    std::mt19937_64 rng(seed);
    std::size_t channels = in_channels;
    for (const auto& layer : spec_.layers) {
        switch (layer.kind) {
            case LayerSpec::Kind::conv:
                extractor_.emplace_back(ConvLayer<T>::make(channels, layer.channels, layer.kernel, layer.stride,
                                                           layer.kernel / 2, false, rng));
                channels = layer.channels;
                break;
            case LayerSpec::Kind::bn:
                extractor_.emplace_back(BatchNormLayer<T>::make(channels));
                break;
            case LayerSpec::Kind::relu:
                extractor_.emplace_back(ReluLayer{});
                break;
            case LayerSpec::Kind::pool:
                extractor_.emplace_back(PoolLayer{layer.kernel});
                break;
        }
    }
    feature_channels_ = afd::feature_channels(spec_);
    head_weight_ = Tensor<T>({num_classes, feature_channels_},
                             fan_in_normal<T>(num_classes * feature_channels_, feature_channels_, rng), true);
    head_bias_ = Tensor<T>::zeros({num_classes}, true);
}

template <typename T>
Tensor<T> Network<T>::extract(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != in_channels_) {
        throw DimensionError("network '" + spec_.id + "' expects input [B," + std::to_string(in_channels_) +
                             ",H,W], got " + shape_str(x.shape()));
    }
    ++forward_count_;
    Tensor<T> h = x;
    for (auto& layer : extractor_) {
        h = std::visit(
            [&](auto& l) -> Tensor<T> {
                using L = std::decay_t<decltype(l)>;
                if constexpr (std::is_same_v<L, ConvLayer<T>>) {
                    return l.forward(h);
                } else if constexpr (std::is_same_v<L, BatchNormLayer<T>>) {
                    return l.forward(h, mode_);
                } else if constexpr (std::is_same_v<L, ReluLayer>) {
                    return relu(h);
                } else {
                    return max_pool2d(h, l.size);
                }
            },
            layer);
    }
    return h;
}

template <typename T>
Tensor<T> Network<T>::classify(const Tensor<T>& feature) const {
    return linear(global_avg_pool(feature), head_weight_, head_bias_);
}

template <typename T>
typename Network<T>::Output Network<T>::forward(const Tensor<T>& x) {
    Tensor<T> feature = extract(x);
    Tensor<T> logits = classify(feature);
    return {std::move(feature), std::move(logits)};
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::extractor_parameters() const {
    std::vector<NamedTensor<T>> params;
    for (std::size_t i = 0; i < extractor_.size(); ++i) {
        const std::string prefix = "extractor." + std::to_string(i) + ".";
        if (const auto* conv = std::get_if<ConvLayer<T>>(&extractor_[i])) {
            params.push_back({prefix + "weight", conv->weight});
            if (conv->bias.defined()) params.push_back({prefix + "bias", conv->bias});
        } else if (const auto* bn = std::get_if<BatchNormLayer<T>>(&extractor_[i])) {
            params.push_back({prefix + "gamma", bn->gamma});
            params.push_back({prefix + "beta", bn->beta});
        }
    }
    return params;
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::head_parameters() const {
    return {{"head.weight", head_weight_}, {"head.bias", head_bias_}};
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::parameters() const {
    auto params = extractor_parameters();
    for (auto& p : head_parameters()) params.push_back(std::move(p));
    return params;
}

template <typename T>
std::vector<NamedStats<T>> Network<T>::running_stats() {
    std::vector<NamedStats<T>> out;
    for (std::size_t i = 0; i < extractor_.size(); ++i) {
        if (auto* bn = std::get_if<BatchNormLayer<T>>(&extractor_[i])) {
            out.push_back({"extractor." + std::to_string(i), &bn->stats});
        }
    }
    return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

template <typename T>
Network<T> build_network(const std::string& arch_spec, std::size_t num_classes, std::uint64_t seed,
                         std::size_t in_channels) {
    return Network<T>(parse_arch(arch_spec), in_channels, num_classes, seed);
}

template <typename T>
Discriminator<T>::Discriminator(std::size_t in_channels, std::size_t base_width, std::uint64_t seed)
    : in_channels_(in_channels) {
    if (in_channels == 0) throw ConfigError("discriminator in_channels must be positive");
    if (base_width == 0) throw ConfigError("discriminator base_width must be positive");
    std::mt19937_64 rng(seed);
    conv1_ = ConvLayer<T>::make(in_channels, base_width, 3, 2, 1, true, rng);
    bn_ = BatchNormLayer<T>::make(base_width);
    conv2_ = ConvLayer<T>::make(base_width, 1, 3, 2, 1, true, rng);
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& feature) {
    if (feature.rank() != 4 || feature.dim(1) != in_channels_) {
        throw DimensionError("discriminator expects [B," + std::to_string(in_channels_) + ",H,W], got " +
                             shape_str(feature.shape()));
    }
    if (feature.dim(2) < kDiscriminatorMinExtent || feature.dim(3) < kDiscriminatorMinExtent) {
        throw DimensionError("discriminator needs spatial extent >= 4, got " + shape_str(feature.shape()));
    }
    Tensor<T> h = conv1_.forward(feature);
    h = bn_.forward(h, mode_);
    h = leaky_relu(h, kDiscriminatorSlope);
    h = conv2_.forward(h);
    h = global_avg_pool(h);
    h = reshape(h, {feature.dim(0)});
    return sigmoid(h);
}

template <typename T>
std::vector<NamedTensor<T>> Discriminator<T>::parameters() const {
    return {{"conv1.weight", conv1_.weight}, {"conv1.bias", conv1_.bias}, {"bn.gamma", bn_.gamma},
            {"bn.beta", bn_.beta},           {"conv2.weight", conv2_.weight}, {"conv2.bias", conv2_.bias}};
}

template <typename T>
std::vector<NamedStats<T>> Discriminator<T>::running_stats() {
    return {{"bn", &bn_.stats}};
}

template <typename T>
TransferLayer<T>::TransferLayer(std::size_t c_in, std::size_t c_out, std::uint64_t seed)
    : c_in_(c_in), c_out_(c_out), identity_(c_in == c_out) {
    if (c_in == 0 || c_out == 0) throw ConfigError("transfer layer channel counts must be positive");
    if (identity_) return;
    std::mt19937_64 rng(seed);
    conv_ = ConvLayer<T>::make(c_in, c_out, 1, 1, 0, false, rng);
    bn_ = BatchNormLayer<T>::make(c_out);
}

template <typename T>
Tensor<T> TransferLayer<T>::forward(const Tensor<T>& x) {
    if (x.rank() != 4 || x.dim(1) != c_in_) {
        throw DimensionError("transfer layer expects [B," + std::to_string(c_in_) + ",H,W], got " +
                             shape_str(x.shape()));
    }
    if (identity_) return x;
    return relu(bn_.forward(conv_.forward(x), mode_));
}

template <typename T>
std::vector<NamedTensor<T>> TransferLayer<T>::parameters() const {
    if (identity_) return {};
    return {{"conv.weight", conv_.weight}, {"bn.gamma", bn_.gamma}, {"bn.beta", bn_.beta}};
}

template <typename T>
std::vector<NamedStats<T>> TransferLayer<T>::running_stats() {
    if (identity_) return {};
    return {{"bn", &bn_.stats}};
}

template class Network<float>;
template class Network<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class TransferLayer<float>;
template class TransferLayer<double>;
template Network<float> build_network(const std::string&, std::size_t, std::uint64_t, std::size_t);
template Network<double> build_network(const std::string&, std::size_t, std::uint64_t, std::size_t);
template std::vector<float> fan_in_normal(std::size_t, std::size_t, std::mt19937_64&);
template std::vector<double> fan_in_normal(std::size_t, std::size_t, std::mt19937_64&);

}  // namespace afd
