#include "sdvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "sdvae/errors.hpp"

namespace sdvae {

void Dataset::validate() const {
    if (images.rows() != labels.size())
        throw ValidationError("dataset '" + name + "': " + std::to_string(images.rows()) + " images but " +
                              std::to_string(labels.size()) + " labels");
    for (std::size_t l : labels)
        if (l >= classes) throw ValidationError("dataset '" + name + "': label " + std::to_string(l) + " >= K");
    for (double v : images.values())
        if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("dataset '" + name + "': pixel outside [0,1]");
}

Tensor Dataset::rows(std::span<const std::size_t> indices) const {
    const std::size_t d = dim_x();
    std::vector<double> v;
    v.reserve(indices.size() * d);
    for (std::size_t i : indices) {
        auto row = images.values().subspan(i * d, d);
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(indices.size(), d, std::move(v));
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out{name, rows(indices), {}, classes, image_rows, image_cols};
    for (std::size_t i : indices) out.labels.push_back(labels.at(i));
    return out;
}

namespace {

class ByteReader {
public:
    ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    std::size_t pos() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw ParseError(what_ + ": truncated file", pos_);
    }
    std::span<const std::uint8_t> bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(v >> shift));
}

void check_magic(ByteReader& r, std::uint32_t expected, const std::string& what) {
    const std::uint32_t magic = r.u32();
    if (magic != expected)
        throw ParseError(what + ": bad magic number " + std::to_string(magic) + ", expected " + std::to_string(expected),
                         0);
}

}  // namespace

Dataset parse_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes,
                  std::string name) {
    ByteReader img(image_bytes, "idx images");
    check_magic(img, kIdxImageMagic, "idx images");
    const std::uint32_t n = img.u32();
    const std::uint32_t rows = img.u32();
    const std::uint32_t cols = img.u32();
    if (n == 0 || rows == 0 || cols == 0) throw ParseError("idx images: zero extent in header", 4);
    const std::size_t dim = static_cast<std::size_t>(rows) * cols;
    auto pixels = img.take(static_cast<std::size_t>(n) * dim);
    if (img.remaining() != 0) throw ParseError("idx images: trailing bytes after pixel data", img.pos());

    ByteReader lab(label_bytes, "idx labels");
    check_magic(lab, kIdxLabelMagic, "idx labels");
    const std::uint32_t count = lab.u32();
    if (count != n)
        throw ParseError("idx labels: count " + std::to_string(count) + " does not match " + std::to_string(n) +
                             " images",
                         4);
    auto raw_labels = lab.take(count);
    if (lab.remaining() != 0) throw ParseError("idx labels: trailing bytes after label data", lab.pos());

    Dataset d;
    d.name = std::move(name);
    d.image_rows = rows;
    d.image_cols = cols;
    std::vector<double> values(pixels.size());
    std::transform(pixels.begin(), pixels.end(), values.begin(), [](std::uint8_t b) { return b / 255.0; });
    d.images = Tensor(n, dim, std::move(values));
    d.labels.assign(raw_labels.begin(), raw_labels.end());
    d.classes = *std::max_element(d.labels.begin(), d.labels.end()) + 1;
    return d;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
    const auto img = read_file(images);
    const auto lab = read_file(labels);
    return parse_idx(img, lab, images.filename().string());
}

std::vector<std::uint8_t> serialize_idx_images(const Dataset& d) {
    if (d.image_rows * d.image_cols != d.dim_x()) throw ValidationError("serialize_idx_images: image dims unset");
    std::vector<std::uint8_t> out;
    out.reserve(16 + d.images.size());
    put_u32(out, kIdxImageMagic);
    put_u32(out, static_cast<std::uint32_t>(d.size()));
    put_u32(out, static_cast<std::uint32_t>(d.image_rows));
    put_u32(out, static_cast<std::uint32_t>(d.image_cols));
    for (double v : d.images.values()) out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    return out;
}

std::vector<std::uint8_t> serialize_idx_labels(const Dataset& d) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + d.size());
    put_u32(out, kIdxLabelMagic);
    put_u32(out, static_cast<std::uint32_t>(d.size()));
    for (std::size_t l : d.labels) {
        if (l > 255) throw ValidationError("serialize_idx_labels: label does not fit a byte");
        out.push_back(static_cast<std::uint8_t>(l));
    }
    return out;
}

void save_idx(const Dataset& d, const std::filesystem::path& images, const std::filesystem::path& labels) {
    write_file(images, serialize_idx_images(d));
    write_file(labels, serialize_idx_labels(d));
}

Dataset binarize(const Dataset& d, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("binarize", "threshold must lie in (0,1)");
    Dataset out = d;
    for (double& v : out.images.values()) v = v >= threshold ? 1.0 : 0.0;
    return out;
}

std::size_t hamming_distance(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw ShapeError("hamming_distance: sizes differ");
    std::size_t d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
    return d;
}

SyntheticData make_synthetic(const SyntheticSpec& spec) {
    if (spec.classes < 2) throw ConfigError("syn_classes", "need at least two classes");
    if (spec.side == 0) throw ConfigError("syn_side", "must be positive");
    if (!(spec.corruption >= 0.0 && spec.corruption <= 0.5)) throw ConfigError("syn_corruption", "must lie in [0, 0.5]");
    if (spec.train_count == 0 || spec.test_count == 0) throw ConfigError("syn_train", "sample counts must be positive");

    const std::size_t dim = spec.side * spec.side;
    std::mt19937_64 rng(spec.seed);
    std::bernoulli_distribution coin(0.5);

    SyntheticData out;
    std::size_t attempts = 0;
    while (out.templates.size() < spec.classes) {
        if (++attempts > 100000) throw ConfigError("syn_side", "cannot place templates at the required distance");
        Tensor t(1, dim);
        for (double& v : t.values()) v = coin(rng) ? 1.0 : 0.0;
        const bool far = std::all_of(out.templates.begin(), out.templates.end(), [&](const Tensor& other) {
            return hamming_distance(t, other) >= spec.min_template_distance;
        });
        if (far) out.templates.push_back(std::move(t));
    }

    std::bernoulli_distribution flip(spec.corruption);
    auto make = [&](std::size_t count, const std::string& name) {
        std::vector<std::size_t> labels(count);
        for (std::size_t i = 0; i < count; ++i) labels[i] = i % spec.classes;
        std::shuffle(labels.begin(), labels.end(), rng);
        std::vector<double> pixels;
        pixels.reserve(count * dim);
        for (std::size_t label : labels)
            for (double v : out.templates[label].values()) pixels.push_back(flip(rng) ? 1.0 - v : v);
        return Dataset{name, Tensor(count, dim, std::move(pixels)), std::move(labels), spec.classes, spec.side, spec.side};
    };
    out.train = make(spec.train_count, "synthetic-train");
    out.test = make(spec.test_count, "synthetic-test");
    return out;
}

}  // namespace sdvae
