#include "afd/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "afd/errors.hpp"

namespace afd {

Tensor<float> Dataset::gather_images(std::span<const std::size_t> indices) const {
    const std::size_t stride = image_numel();
    std::vector<float> out(indices.size() * stride);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= size()) throw DataError("sample index " + std::to_string(indices[i]) + " out of range");
        std::copy_n(images.begin() + static_cast<std::ptrdiff_t>(indices[i] * stride), stride,
                    out.begin() + static_cast<std::ptrdiff_t>(i * stride));
    }
    return Tensor<float>({indices.size(), channels, height, width}, std::move(out));
}

std::vector<std::int32_t> Dataset::gather_labels(std::span<const std::size_t> indices) const {
    std::vector<std::int32_t> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) out[i] = labels.at(indices[i]);
    return out;
}

void Dataset::validate() const {
    if (images.size() != size() * image_numel()) {
        throw DataError("dataset '" + split + "': " + std::to_string(images.size()) + " pixel values for " +
                        std::to_string(size()) + " labels");
    }
    for (std::int32_t label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= num_classes) {
            throw DataError("dataset '" + split + "': label " + std::to_string(label) + " outside [0, " +
                            std::to_string(num_classes) + ")");
        }
    }
}

Standardization fit_standardization(const Dataset& data) {
    Standardization stats{std::vector<float>(data.channels), std::vector<float>(data.channels)};
    const std::size_t plane = data.height * data.width;
    const std::size_t count = data.size() * plane;
    if (count == 0) throw DataError("cannot standardize an empty dataset");
    for (std::size_t c = 0; c < data.channels; ++c) {
        double acc = 0.0;
        for (std::size_t n = 0; n < data.size(); ++n) {
            const float* p = data.images.data() + (n * data.channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        }
        const double m = acc / static_cast<double>(count);
        double sq = 0.0;
        for (std::size_t n = 0; n < data.size(); ++n) {
            const float* p = data.images.data() + (n * data.channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - m) * (p[i] - m);
        }
        const double sd = std::sqrt(sq / static_cast<double>(count));
        stats.mean[c] = static_cast<float>(m);
        stats.stddev[c] = static_cast<float>(sd > 1e-12 ? sd : 1.0);
    }
    return stats;
}

void apply_standardization(Dataset& data, const Standardization& stats) {
    if (stats.mean.size() != data.channels || stats.stddev.size() != data.channels) {
        throw DataError("standardization statistics do not match channel count");
    }
    const std::size_t plane = data.height * data.width;
    for (std::size_t n = 0; n < data.size(); ++n) {
        for (std::size_t c = 0; c < data.channels; ++c) {
            float* p = data.images.data() + (n * data.channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] = (p[i] - stats.mean[c]) / stats.stddev[c];
        }
    }
}

namespace {

std::string read_file(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw IoError("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(file), {});
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& path) {
    if (bytes.size() < offset + 4) throw FormatError("truncated IDX header in " + path, bytes.size());
    std::uint32_t v = 0;
    for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
    return v;
}

void put_be32(std::string& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open for writing: " + path);
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) throw IoError("failed writing " + path);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t num_classes) {
    const std::string img = read_file(images_path);
    const std::string lab = read_file(labels_path);

    if (read_be32(img, 0, images_path) != kIdxImageMagic) {
        throw FormatError("bad IDX image magic in " + images_path, 0);
    }
    if (read_be32(lab, 0, labels_path) != kIdxLabelMagic) {
        throw FormatError("bad IDX label magic in " + labels_path, 0);
    }
    const std::size_t n_images = read_be32(img, 4, images_path);
    const std::size_t rows = read_be32(img, 8, images_path);
    const std::size_t cols = read_be32(img, 12, images_path);
    const std::size_t n_labels = read_be32(lab, 4, labels_path);
    if (n_images != n_labels) {
        throw FormatError("image/label count mismatch: " + std::to_string(n_images) + " images in " + images_path +
                              " vs " + std::to_string(n_labels) + " labels in " + labels_path,
                          4);
    }
    if (rows == 0 || cols == 0) throw FormatError("zero image extent in " + images_path, 8);

    const std::size_t img_header = 16, lab_header = 8;
    const std::size_t pixels = n_images * rows * cols;
    if (img.size() < img_header + pixels) {
        throw FormatError("truncated IDX image payload in " + images_path + ": expected " + std::to_string(pixels) +
                              " bytes",
                          img.size());
    }
    if (lab.size() < lab_header + n_labels) {
        throw FormatError("truncated IDX label payload in " + labels_path + ": expected " +
                              std::to_string(n_labels) + " bytes",
                          lab.size());
    }

    Dataset data;
    data.channels = 1;
    data.height = rows;
    data.width = cols;
    data.split = images_path;
    data.images.resize(pixels);
    for (std::size_t i = 0; i < pixels; ++i) {
        data.images[i] = static_cast<float>(static_cast<unsigned char>(img[img_header + i])) / 255.0f;
    }
    data.labels.resize(n_labels);
    std::int32_t max_label = 0;
    for (std::size_t i = 0; i < n_labels; ++i) {
        data.labels[i] = static_cast<unsigned char>(lab[lab_header + i]);
        max_label = std::max(max_label, data.labels[i]);
    }
    data.num_classes = num_classes != 0 ? num_classes : std::max<std::size_t>(2, static_cast<std::size_t>(max_label) + 1);
    data.validate();
    return data;
}

void write_idx(const Dataset& data, const std::string& images_path, const std::string& labels_path) {
    if (data.channels != 1) throw DataError("IDX export supports single-channel images only");
    data.validate();
    std::string img;
    put_be32(img, kIdxImageMagic);
    put_be32(img, static_cast<std::uint32_t>(data.size()));
    put_be32(img, static_cast<std::uint32_t>(data.height));
    put_be32(img, static_cast<std::uint32_t>(data.width));
    img.reserve(img.size() + data.images.size());
    for (float v : data.images) {
        const float clamped = std::clamp(v, 0.0f, 1.0f);
        img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0f))));
    }
    std::string lab;
    put_be32(lab, kIdxLabelMagic);
    put_be32(lab, static_cast<std::uint32_t>(data.size()));
    for (std::int32_t label : data.labels) {
        if (label > 255) throw DataError("IDX labels must fit in one byte");
        lab.push_back(static_cast<char>(static_cast<unsigned char>(label)));
    }
    write_file(images_path, img);
    write_file(labels_path, lab);
}

std::vector<float> blob_template(std::size_t cls, std::size_t image_size) {
    // Classes 0..14 use non-empty subsets of the 2x2 quadrant centres; larger
    // class ids fall back to subsets of a 3x3 grid.
    std::size_t grid = 2;
    std::size_t mask = cls + 1;
    if (cls >= 15) {
        grid = 3;
        mask = cls - 15 + 1;
        if (mask >= (1u << 9)) throw ConfigError("synth_blobs supports at most 526 classes");
    }
    const double cell = static_cast<double>(image_size) / static_cast<double>(grid);
    const double sigma = cell / 4.0;
    std::vector<float> img(image_size * image_size, 0.0f);
    for (std::size_t g = 0; g < grid * grid; ++g) {
        if (!((mask >> g) & 1u)) continue;
        const double cy = (static_cast<double>(g / grid) + 0.5) * cell - 0.5;
        const double cx = (static_cast<double>(g % grid) + 0.5) * cell - 0.5;
        for (std::size_t y = 0; y < image_size; ++y) {
            for (std::size_t x = 0; x < image_size; ++x) {
                const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
                img[y * image_size + x] += static_cast<float>(std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
            }
        }
    }
    return img;
}

Dataset synth_blobs(std::size_t num_classes, std::size_t per_class, std::size_t image_size, double noise_std,
                    std::uint64_t seed) {
    if (num_classes < 2 || per_class == 0 || image_size < 4 || noise_std < 0.0) {
        throw ConfigError("synth_blobs: need num_classes >= 2, per_class >= 1, image_size >= 4, noise_std >= 0");
    }
    Dataset data;
    data.channels = 1;
    data.height = image_size;
    data.width = image_size;
    data.num_classes = num_classes;
    data.split = "synth";
    const std::size_t plane = image_size * image_size;
    data.images.reserve(num_classes * per_class * plane);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t c = 0; c < num_classes; ++c) {
        const std::vector<float> tpl = blob_template(c, image_size);
        for (std::size_t k = 0; k < per_class; ++k) {
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = tpl[i] + noise_std * noise(rng);
                data.images.push_back(static_cast<float>(std::clamp(v, 0.0, 1.0)));
            }
            data.labels.push_back(static_cast<std::int32_t>(c));
        }
    }
    return data;
}

std::vector<std::vector<std::size_t>> batches(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < dataset_size; start += batch_size) {
        const std::size_t end = std::min(dataset_size, start + batch_size);
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return out;
}

}  // namespace afd
