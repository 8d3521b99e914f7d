#pragma once

#include <string>
#include <vector>

#include "afd/data.hpp"
#include "afd/nn.hpp"

namespace afd {

struct SimilarityReport {
    double l1 = 0.0;      // mean absolute difference per element
    double l2 = 0.0;      // root mean squared difference per element
    double cosine = 0.0;  // cosine of the flattened per-sample vectors
    std::size_t samples = 0;
};

/// Accumulates per-sample comparisons of two feature batches.
class SimilarityAccumulator {
public:
    /// Rows of `a` and `b` are per-sample flattened vectors of equal length.
    void add(std::span<const float> a, std::span<const float> b, std::size_t samples);
    SimilarityReport report() const;

private:
    double l1_ = 0.0;
    double l2_ = 0.0;
    double cosine_ = 0.0;
    std::size_t samples_ = 0;
};

/// Reduces [B,C,H,W] features to [B,target] per-channel spatial means, averaging
/// contiguous channel groups when C is a multiple of `target`.
std::vector<float> pooled_channels(const Tensor<float>& feature, std::size_t target_channels);

/// Compares the last-stage features of two networks over `data` in eval mode.
/// Equal feature shapes compare the raw maps; unequal channel counts compare
/// per-channel spatial means reduced to the smaller count. Other mismatches
/// throw UsageError.
SimilarityReport feature_similarity(Network<float>& a, Network<float>& b, const Dataset& data,
                                    std::size_t chunk = 256);

/// Heatmap [H',W'] at the feature map's resolution, values in [0, 1].
struct Heatmap {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> values;
};

/// Class activation map from the gradient of one logit with respect to the
/// last-stage feature map of a single image [1,C,H,W].
Heatmap grad_cam(Network<float>& net, const Tensor<float>& image, std::size_t target_class);

/// Grad-CAM core on a given feature map [1,C,H,W] and its logit gradient.
Heatmap cam_from_gradients(std::span<const float> feature, std::span<const float> gradient, std::size_t channels,
                           std::size_t height, std::size_t width);

/// Binary PGM (P5, maxval 255); each value v maps to round(v * 255).
void export_pgm(const Heatmap& map, const std::string& path);

}  // namespace afd
