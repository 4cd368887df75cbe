#include "sdvae/exports.hpp"

#include <charconv>
#include <fstream>

#include "sdvae/errors.hpp"

namespace sdvae {

namespace {

void put(std::ofstream& out, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, ptr - buf);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
    out.flush();
    if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void export_latents(const ModelParams& params, const Dataset& data, const std::filesystem::path& path) {
    const LatentSummary lat = infer_latents(params, data.images);
    std::ofstream out = open_out(path);
    out << "label";
    for (std::size_t k = 0; k < lat.v_probs.cols(); ++k) out << ",v" << k;
    for (std::size_t j = 0; j < lat.u_mean.cols(); ++j) out << ",u" << j;
    out << '\n';
    for (std::size_t r = 0; r < data.size(); ++r) {
        out << data.labels[r];
        for (std::size_t k = 0; k < lat.v_probs.cols(); ++k) {
            out << ',';
            put(out, lat.v_probs(r, k));
        }
        for (std::size_t j = 0; j < lat.u_mean.cols(); ++j) {
            out << ',';
            put(out, lat.u_mean(r, j));
        }
        out << '\n';
    }
    finish(out, path);
}

ReconstructionExport export_reconstructions(const ModelParams& params, const Dataset& data, LatentMask mask,
                                            VDecode v_decode, const std::filesystem::path& path) {
    const Reconstruction rec = reconstruct(params, data.images, mask, v_decode);
    ReconstructionExport result{0.0, path, path.string() + ".re.csv"};

    std::ofstream pixels = open_out(result.pixels);
    for (std::size_t r = 0; r < rec.pixel_means.rows(); ++r) {
        for (std::size_t c = 0; c < rec.pixel_means.cols(); ++c) {
            if (c) pixels << ',';
            put(pixels, rec.pixel_means(r, c));
        }
        pixels << '\n';
    }
    finish(pixels, result.pixels);

    std::ofstream side = open_out(result.sidecar);
    side << "index,label,re\n";
    double total = 0.0;
    for (std::size_t r = 0; r < rec.loglik.rows(); ++r) {
        side << r << ',' << data.labels[r] << ',';
        put(side, rec.loglik[r]);
        side << '\n';
        total += rec.loglik[r];
    }
    finish(side, result.sidecar);
    result.mean_re = total / static_cast<double>(data.size());
    return result;
}

LatentMask parse_latent_mask(const std::string& name) {
    if (name == "none") return LatentMask::None;
    if (name == "mask-u") return LatentMask::MaskU;
    if (name == "mask-v") return LatentMask::MaskV;
    throw ConfigError("mask", "expected one of {none, mask-u, mask-v}, got '" + name + "'");
}

}  // namespace sdvae
