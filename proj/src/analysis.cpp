#include "afd/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "afd/errors.hpp"
#include "afd/ops.hpp"

namespace afd {

void SimilarityAccumulator::add(std::span<const float> a, std::span<const float> b, std::size_t samples) {
    if (a.size() != b.size() || samples == 0 || a.size() % samples != 0) {
        throw UsageError("similarity: feature vectors differ in length");
    }
    const std::size_t dim = a.size() / samples;
    for (std::size_t s = 0; s < samples; ++s) {
        double abs_sum = 0.0, sq_sum = 0.0, dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t i = s * dim; i < (s + 1) * dim; ++i) {
            const double x = a[i], y = b[i];
            abs_sum += std::abs(x - y);
            sq_sum += (x - y) * (x - y);
            dot += x * y;
            na += x * x;
            nb += y * y;
        }
        l1_ += abs_sum / static_cast<double>(dim);
        l2_ += std::sqrt(sq_sum / static_cast<double>(dim));
        // Two zero vectors count as identical; one zero vector as unrelated.
        double cos = 0.0;
        if (na == 0.0 && nb == 0.0) {
            cos = 1.0;
        } else if (na > 0.0 && nb > 0.0) {
            cos = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
        }
        cosine_ += cos;
    }
    samples_ += samples;
}

SimilarityReport SimilarityAccumulator::report() const {
    if (samples_ == 0) return {};
    const double n = static_cast<double>(samples_);
    return {l1_ / n, l2_ / n, cosine_ / n, samples_};
}

std::vector<float> pooled_channels(const Tensor<float>& feature, std::size_t target_channels) {
    if (feature.rank() != 4) throw DimensionError("pooled_channels expects [B,C,H,W], got " + shape_str(feature.shape()));
    const std::size_t B = feature.dim(0), C = feature.dim(1), plane = feature.dim(2) * feature.dim(3);
    if (target_channels == 0 || C % target_channels != 0) {
        throw UsageError("cannot reduce " + std::to_string(C) + " channels to " + std::to_string(target_channels));
    }
    const std::size_t group = C / target_channels;
    std::vector<float> out(B * target_channels);
    auto x = feature.data();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < target_channels; ++t) {
            double acc = 0.0;
            for (std::size_t c = t * group; c < (t + 1) * group; ++c) {
                const float* p = x.data() + (b * C + c) * plane;
                for (std::size_t i = 0; i < plane; ++i) acc += p[i];
            }
            out[b * target_channels + t] = static_cast<float>(acc / static_cast<double>(group * plane));
        }
    }
    return out;
}

SimilarityReport feature_similarity(Network<float>& a, Network<float>& b, const Dataset& data, std::size_t chunk) {
    if (data.size() == 0) throw DataError("feature_similarity: empty dataset");
    if (chunk == 0) chunk = data.size();
    const NormMode mode_a = a.mode(), mode_b = b.mode();
    a.set_mode(NormMode::eval);
    b.set_mode(NormMode::eval);
    NoGradGuard guard;
    SimilarityAccumulator acc;
    try {
        for (std::size_t start = 0; start < data.size(); start += chunk) {
            const std::size_t end = std::min(data.size(), start + chunk);
            std::vector<std::size_t> idx(end - start);
            for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
            Tensor<float> x = data.gather_images(idx);
            Tensor<float> fa = a.extract(x);
            Tensor<float> fb = b.extract(x);
            if (fa.shape() == fb.shape()) {
                acc.add(fa.data(), fb.data(), idx.size());
                continue;
            }
            if (fa.dim(2) != fb.dim(2) || fa.dim(3) != fb.dim(3)) {
                throw UsageError("feature maps differ in spatial extent: " + shape_str(fa.shape()) + " vs " +
                                 shape_str(fb.shape()));
            }
            const std::size_t target = std::min(fa.dim(1), fb.dim(1));
            acc.add(pooled_channels(fa, target), pooled_channels(fb, target), idx.size());
        }
    } catch (...) {
        a.set_mode(mode_a);
        b.set_mode(mode_b);
        throw;
    }
    a.set_mode(mode_a);
    b.set_mode(mode_b);
    return acc.report();
}

Heatmap cam_from_gradients(std::span<const float> feature, std::span<const float> gradient, std::size_t channels,
                           std::size_t height, std::size_t width) {
    const std::size_t plane = height * width;
    if (feature.size() != channels * plane || gradient.size() != feature.size()) {
        throw DimensionError("grad_cam: feature and gradient sizes disagree");
    }
    Heatmap map{height, width, std::vector<float>(plane, 0.0f)};
    std::vector<double> acc(plane, 0.0);
    for (std::size_t c = 0; c < channels; ++c) {
        double w = 0.0;
        for (std::size_t i = 0; i < plane; ++i) w += gradient[c * plane + i];
        w /= static_cast<double>(plane);
        for (std::size_t i = 0; i < plane; ++i) acc[i] += w * feature[c * plane + i];
    }
    double peak = 0.0;
    for (double& v : acc) {
        v = std::max(v, 0.0);
        peak = std::max(peak, v);
    }
    if (peak > 0.0) {
        for (std::size_t i = 0; i < plane; ++i) map.values[i] = static_cast<float>(acc[i] / peak);
    }
    return map;
}

Heatmap grad_cam(Network<float>& net, const Tensor<float>& image, std::size_t target_class) {
    if (image.rank() != 4 || image.dim(0) != 1) {
        throw DimensionError("grad_cam expects a single image [1,C,H,W], got " + shape_str(image.shape()));
    }
    if (target_class >= net.num_classes()) {
        throw DataError("grad_cam: class " + std::to_string(target_class) + " outside [0, " +
                        std::to_string(net.num_classes()) + ")");
    }
    const NormMode mode = net.mode();
    net.set_mode(NormMode::eval);
    Tensor<float> feature;
    try {
        NoGradGuard guard;
        feature = net.extract(image);
    } catch (...) {
        net.set_mode(mode);
        throw;
    }
    net.set_mode(mode);

    // Re-enter the graph at the feature map so the gradient stops there.
    Tensor<float> leaf(feature.shape(), {feature.data().begin(), feature.data().end()}, true);
    Tensor<float> logits = net.classify(leaf);
    std::vector<float> seed(logits.numel(), 0.0f);
    seed[target_class] = 1.0f;
    const Tensor<float> targets[] = {leaf};
    logits.backward_to(targets, seed);
    std::vector<float> grad(leaf.numel(), 0.0f);
    if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), grad.begin());
    return cam_from_gradients(leaf.data(), grad, feature.dim(1), feature.dim(2), feature.dim(3));
}

void export_pgm(const Heatmap& map, const std::string& path) {
    if (map.values.size() != map.height * map.width || map.values.empty()) {
        throw DimensionError("export_pgm: heatmap size does not match its extent");
    }
    std::string bytes = "P5\n" + std::to_string(map.width) + " " + std::to_string(map.height) + "\n255\n";
    for (float v : map.values) {
        if (!(v >= 0.0f && v <= 1.0f)) throw ContractError("export_pgm: value outside [0, 1]");
        bytes.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace afd
