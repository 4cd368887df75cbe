#include <cstdint>
#include <filesystem>
#include <limits>

#include "sdvae/data.hpp"
#include "sdvae/errors.hpp"
#include "test_support.hpp"

using namespace sdvae;

namespace {

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

// Hand-assembled fixtures, independent of the serializer.
std::vector<std::uint8_t> image_fixture(std::uint32_t n, std::uint32_t rows, std::uint32_t cols, std::uint32_t seed) {
    std::vector<std::uint8_t> b;
    put_be32(b, 2051);
    put_be32(b, n);
    put_be32(b, rows);
    put_be32(b, cols);
    std::mt19937 rng(seed);
    for (std::uint32_t i = 0; i < n * rows * cols; ++i) b.push_back(static_cast<std::uint8_t>(rng() & 0xff));
    return b;
}

std::vector<std::uint8_t> label_fixture(std::uint32_t n, std::uint32_t classes) {
    std::vector<std::uint8_t> b;
    put_be32(b, 2049);
    put_be32(b, n);
    for (std::uint32_t i = 0; i < n; ++i) b.push_back(static_cast<std::uint8_t>((i * 7) % classes));
    return b;
}

std::size_t parse_error_offset(const std::vector<std::uint8_t>& img, const std::vector<std::uint8_t>& lab) {
    try {
        parse_idx(img, lab);
    } catch (const ParseError& e) {
        return e.offset();
    }
    FAIL("expected ParseError");
    return std::numeric_limits<std::size_t>::max();
}

}  // namespace

TEST_CASE("idx: parse reads header, pixels / 255 and labels") {
    const auto img = image_fixture(3, 2, 2, 1);
    const auto lab = label_fixture(3, 10);
    const Dataset d = parse_idx(img, lab);
    CHECK(d.size() == 3);
    CHECK(d.dim_x() == 4);
    CHECK(d.image_rows == 2);
    CHECK(d.image_cols == 2);
    for (std::size_t i = 0; i < 12; ++i) CHECK(d.images[i] == img[16 + i] / 255.0);
    CHECK(d.labels == std::vector<std::size_t>{0, 7, 4});
    CHECK(d.classes == 8);
    d.validate();
}

TEST_CASE("idx: parse then serialize reproduces the input bytes exactly") {
    for (std::uint32_t seed = 0; seed < 5; ++seed) {
        const auto img = image_fixture(10 + seed, 3 + seed, 4, seed);
        const auto lab = label_fixture(10 + seed, 10);
        const Dataset d = parse_idx(img, lab);
        CHECK(serialize_idx_images(d) == img);
        CHECK(serialize_idx_labels(d) == lab);
    }
}

TEST_CASE("idx: file round trip through disk") {
    const auto dir = std::filesystem::temp_directory_path() / "sdvae_test_idx";
    std::filesystem::create_directories(dir);
    const auto img = image_fixture(6, 5, 5, 9);
    const auto lab = label_fixture(6, 3);
    write_file(dir / "a-images", img);
    write_file(dir / "a-labels", lab);
    const Dataset d = load_idx(dir / "a-images", dir / "a-labels");
    save_idx(d, dir / "b-images", dir / "b-labels");
    CHECK(read_file(dir / "b-images") == img);
    CHECK(read_file(dir / "b-labels") == lab);
    CHECK_THROWS_AS(load_idx(dir / "missing", dir / "a-labels"), IoError);
    std::filesystem::remove_all(dir);
}

TEST_CASE("idx: corrupted fixtures produce structured errors with offsets") {
    const auto img = image_fixture(4, 2, 2, 3);
    const auto lab = label_fixture(4, 2);

    auto bad_magic = img;
    bad_magic[3] = 0x01;
    CHECK(parse_error_offset(bad_magic, lab) == 0);
    auto bad_label_magic = lab;
    bad_label_magic[2] = 0x09;
    CHECK(parse_error_offset(img, bad_label_magic) == 0);
    CHECK_THROWS_WITH_AS(parse_idx(bad_magic, lab), doctest::Contains("bad magic"), ParseError);

    auto truncated = img;
    truncated.pop_back();
    CHECK(parse_error_offset(truncated, lab) == 16);

    CHECK(parse_error_offset(img, label_fixture(5, 2)) == 4);
    CHECK(parse_error_offset({}, lab) == 0);

    auto trailing = img;
    trailing.push_back(0);
    CHECK(parse_error_offset(trailing, lab) == img.size());

    auto zero = image_fixture(0, 2, 2, 3);
    CHECK_THROWS_AS(parse_idx(zero, label_fixture(0, 2)), ParseError);

    // ParseError is an I/O-class error.
    CHECK_THROWS_AS(parse_idx(bad_magic, lab), IoError);
}

TEST_CASE("binarize: threshold examples and idempotence") {
    Dataset d{"x", Tensor(1, 4, {0.2, 0.5, 0.7, 1.0}), {0}, 1, 2, 2};
    const Dataset b = binarize(d);
    CHECK(b.images.same_values(Tensor(1, 4, {0.0, 1.0, 1.0, 1.0})));
    CHECK(binarize(b).images.same_values(b.images));
    CHECK(binarize(d, 0.8).images.same_values(Tensor(1, 4, {0.0, 0.0, 0.0, 1.0})));
    CHECK_THROWS_AS(binarize(d, 0.0), ConfigError);
    CHECK_THROWS_AS(binarize(d, 1.0), ConfigError);
}

TEST_CASE("dataset validation") {
    Dataset d{"x", Tensor(2, 2, 0.5), {0, 1}, 2, 1, 2};
    d.validate();
    Dataset bad_label = d;
    bad_label.labels[1] = 2;
    CHECK_THROWS_AS(bad_label.validate(), ValidationError);
    Dataset bad_pixel = d;
    bad_pixel.images[0] = 1.5;
    CHECK_THROWS_AS(bad_pixel.validate(), ValidationError);
    Dataset short_labels = d;
    short_labels.labels.pop_back();
    CHECK_THROWS_AS(short_labels.validate(), ValidationError);

    const std::size_t idx[] = {1};
    CHECK(d.subset(idx).size() == 1);
    CHECK(d.subset(idx).labels[0] == 1);
}

TEST_CASE("synthetic: deterministic, balanced, templates far apart") {
    SyntheticSpec spec;
    spec.train_count = 200;
    spec.test_count = 40;
    const SyntheticData a = make_synthetic(spec);
    const SyntheticData b = make_synthetic(spec);
    CHECK(a.train.images.same_values(b.train.images));
    CHECK(a.train.labels == b.train.labels);
    CHECK(a.test.images.same_values(b.test.images));
    spec.seed = 2;
    CHECK_FALSE(make_synthetic(spec).train.images.same_values(a.train.images));

    REQUIRE(a.templates.size() == 4);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = i + 1; j < 4; ++j) CHECK(hamming_distance(a.templates[i], a.templates[j]) >= 8);

    std::vector<std::size_t> counts(4, 0);
    for (std::size_t y : a.train.labels) ++counts[y];
    for (std::size_t c : counts) CHECK(c == 50);
    a.train.validate();
    a.test.validate();
    CHECK(a.train.dim_x() == 64);
}

TEST_CASE("synthetic: zero corruption reproduces templates; nearest template recovers labels at rate 0.1") {
    SyntheticSpec clean;
    clean.corruption = 0.0;
    clean.train_count = 40;
    clean.test_count = 8;
    const SyntheticData c = make_synthetic(clean);
    for (std::size_t r = 0; r < c.train.size(); ++r)
        for (std::size_t k = 0; k < 64; ++k) CHECK(c.train.images(r, k) == c.templates[c.train.labels[r]][k]);

    SyntheticSpec noisy;
    noisy.train_count = 2000;
    noisy.test_count = 500;
    const SyntheticData d = make_synthetic(noisy);
    std::size_t correct = 0, flipped = 0;
    for (std::size_t r = 0; r < d.train.size(); ++r) {
        std::size_t best = 0, best_dist = 65;
        for (std::size_t k = 0; k < d.templates.size(); ++k) {
            std::size_t dist = 0;
            for (std::size_t p = 0; p < 64; ++p) dist += d.train.images(r, p) != d.templates[k][p];
            if (dist < best_dist) {
                best_dist = dist;
                best = k;
            }
        }
        correct += best == d.train.labels[r];
        for (std::size_t p = 0; p < 64; ++p) flipped += d.train.images(r, p) != d.templates[d.train.labels[r]][p];
    }
    CHECK(static_cast<double>(correct) / d.train.size() >= 0.99);
    const double rate = static_cast<double>(flipped) / (d.train.size() * 64.0);
    CHECK(rate == doctest::Approx(0.1).epsilon(0.05));
}

TEST_CASE("synthetic: invalid specs are config errors") {
    SyntheticSpec s;
    s.classes = 1;
    CHECK_THROWS_AS(make_synthetic(s), ConfigError);
    s = {};
    s.corruption = 0.6;
    CHECK_THROWS_AS(make_synthetic(s), ConfigError);
    s = {};
    s.side = 2;  // 4 pixels cannot host 4 templates 8 flips apart
    CHECK_THROWS_AS(make_synthetic(s), ConfigError);
}
