#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdvae/tensor.hpp"

namespace sdvae {

// Images as an n x dim_x matrix with pixels in [0,1], plus class labels.
struct Dataset {
    std::string name;
    Tensor images;
    std::vector<std::size_t> labels;
    std::size_t classes = 0;
    std::size_t image_rows = 0;  // image_rows * image_cols == dim_x
    std::size_t image_cols = 0;

    std::size_t size() const { return labels.size(); }
    std::size_t dim_x() const { return images.cols(); }
    void validate() const;

    Dataset subset(std::span<const std::size_t> indices) const;
    Tensor rows(std::span<const std::size_t> indices) const;
};

inline constexpr std::uint32_t kIdxImageMagic = 2051;
inline constexpr std::uint32_t kIdxLabelMagic = 2049;

// IDX (big-endian) images + labels. Pixels are bytes / 255. `classes` is
// max label + 1.
Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                  std::string name = "idx");
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

// Inverse of parse_idx: pixels written as round(255 * x).
std::vector<std::uint8_t> serialize_idx_images(const Dataset& d);
std::vector<std::uint8_t> serialize_idx_labels(const Dataset& d);
void save_idx(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels);

// Pixels >= threshold become 1, the rest 0.
Dataset binarize(const Dataset& d, double threshold = 0.5);

struct SyntheticSpec {
    std::size_t classes = 4;
    std::size_t side = 8;            // templates are side x side
    double corruption = 0.1;         // independent per-pixel flip rate
    std::size_t train_count = 2000;
    std::size_t test_count = 500;
    std::size_t min_template_distance = 8;
    std::uint64_t seed = 1;
};

struct SyntheticData {
    Dataset train;
    Dataset test;
    std::vector<Tensor> templates;  // 1 x side*side binary rows
};

// Balanced classes; each sample is its class template with pixels flipped
// independently at the corruption rate.
SyntheticData make_synthetic(const SyntheticSpec& spec);

std::size_t hamming_distance(const Tensor& a, const Tensor& b);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace sdvae
