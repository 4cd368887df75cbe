#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sdvae/gradcheck.hpp"

namespace sdvae {

struct GradCheckEntry {
    std::string name;
    GradCheckReport report;
};

struct GradCheckSuiteResult {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    double seconds = 0.0;
};

// Central-difference check of every primitive (`trials` random
// shape-compatible inputs each) and of every objective, with and without the
// flow, on a 4-pixel / K=2 / dim_u=2 model with frozen noise, frozen v
// samples, a frozen dropout mask and a frozen reward.
GradCheckSuiteResult run_gradcheck_suite(std::uint64_t seed = 7, std::size_t trials = 100, double h = 1e-6);

}  // namespace sdvae
