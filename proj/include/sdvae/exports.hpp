#pragma once

#include <filesystem>
#include <string>

#include "sdvae/data.hpp"
#include "sdvae/model.hpp"

namespace sdvae {

// Comma-separated, header `label,v0..v{K-1},u0..u{dim_u-1}`, one row per
// example: label, v probabilities, posterior mean of u.
void export_latents(const ModelParams& params, const Dataset& data, const std::filesystem::path& out);

struct ReconstructionExport {
    double mean_re = 0.0;
    std::filesystem::path pixels;
    std::filesystem::path sidecar;
};

// Writes pixel means (dim_x comma-separated values per row, no header) to
// `out`, and per-example reconstruction log-likelihoods to `<out>.re.csv`
// with header `index,label,re`.
ReconstructionExport export_reconstructions(const ModelParams& params, const Dataset& data, LatentMask mask,
                                            VDecode v_decode, const std::filesystem::path& out);

LatentMask parse_latent_mask(const std::string& name);

}  // namespace sdvae
