#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "afd/tensor.hpp"

namespace afd {

/// Labelled image set stored as N x C x H x W floats.
struct Dataset {
    std::size_t channels = 1;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_classes = 0;
    std::vector<float> images;
    std::vector<std::int32_t> labels;
    std::string split;

    std::size_t size() const { return labels.size(); }
    std::size_t image_numel() const { return channels * height * width; }

    /// Gathers the given samples into a [B,C,H,W] tensor.
    Tensor<float> gather_images(std::span<const std::size_t> indices) const;
    std::vector<std::int32_t> gather_labels(std::span<const std::size_t> indices) const;

    /// Throws DataError when labels or sizes violate the invariants.
    void validate() const;
};

struct Standardization {
    std::vector<float> mean;
    std::vector<float> stddev;
};

/// Per-channel mean and standard deviation over every pixel of `data`.
Standardization fit_standardization(const Dataset& data);
void apply_standardization(Dataset& data, const Standardization& stats);

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Reads an IDX image/label pair. Pixels map byte/255 into [0, 1].
/// `num_classes` of 0 infers max(label) + 1. Throws FormatError with the
/// failing byte offset on bad magic, truncation, or count mismatch.
Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t num_classes = 0);

/// Writes a single-channel dataset as IDX; values are clamped to [0, 1] and
/// quantized as round(v * 255).
void write_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path);

/// Class-template images: each class lights a distinct subset of quadrant
/// blobs, plus Gaussian pixel noise, clamped to [0, 1]. Samples are ordered
/// class-major with exactly `per_class` samples per label.
Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t image_size, double noise_std,
                    std::uint64_t seed);

/// Noise-free template of one class, as used by synth_blobs.
std::vector<float> blob_template(std::size_t cls, std::size_t image_size);

/// Shuffled index batches for one epoch. The order is a pure function of
/// (seed, epoch); the final short batch is kept.
std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

}  // namespace afd
