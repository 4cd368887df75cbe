#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "sdvae/model.hpp"

namespace sdvae {

// Binary checkpoint, all integers little-endian:
//   "SDVAECKP" | u32 version
//   model config: u64 dim_x, dim_u, classes, decoder_hidden, flow_length,
//                 u64 n_trunk, n_trunk x u64 widths, f64 dropout, u32 likelihood
//   u32 tensor count, then per tensor: u32 name length, name bytes,
//                 u64 rows, u64 cols, rows*cols f64 (IEEE-754 bit patterns)
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace sdvae
