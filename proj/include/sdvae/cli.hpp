#pragma once

// Command-line front end: train, eval, export-latents, export-recon,
// gradcheck, grid. Exit codes: 0 ok, 2 usage/config, 3 numeric failure,
// 4 I/O. Failures print one JSON line {"error", "field", "message"} to `err`.

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sdvae/data.hpp"
#include "sdvae/trainer.hpp"

namespace sdvae {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;
inline constexpr int kExitIo = 4;

// Environment variables read by the CLI.
inline constexpr const char* kOutRootEnv = "SDVAE_OUT_ROOT";
inline constexpr const char* kConfigDirEnv = "SDVAE_CONFIG_DIR";
inline constexpr const char* kMnistDirEnv = "SDVAE_MNIST_DIR";

struct LoadedData {
    Dataset train;
    std::optional<Dataset> test;
};

// `config.dataset` is one of
//   synthetic                       generated from the syn_* keys
//   idx:<train-img>,<train-lbl>[,<test-img>,<test-lbl>]
//   mnist[:<dir>]                   standard MNIST file names in <dir> or $SDVAE_MNIST_DIR
// IDX data is binarized when binarize > 0.
LoadedData load_datasets(const TrainingConfig& config);

// A path to an existing file, or a bare name looked up as <name>.cfg in
// $SDVAE_CONFIG_DIR and then in the bundled configs directory.
std::filesystem::path resolve_config_path(const std::string& name_or_path);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace sdvae
