#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "sdvae/autodiff.hpp"

namespace sdvae {

// Builds a scalar objective on `graph` from the bound inputs. Must be
// deterministic: same input values, same output bits.
using ScalarObjective = std::function<Var(Graph& graph, std::span<const Var> inputs)>;

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t skipped_kinks = 0;
    // "input[i](r,c)" of the worst coordinate.
    std::string worst;
};

// Compares backward() against central differences on every coordinate of
// every input. Error per coordinate is |analytic - numeric| / max(1, |numeric|).
// Coordinates where the one-sided slopes disagree by more than 1e-3
// (a kink such as relu at 0) are skipped and counted.
GradCheckReport finite_difference_check(const ScalarObjective& objective, std::span<Tensor* const> inputs,
                                        double h = 1e-6);

// Convenience for a single input tensor.
GradCheckReport finite_difference_check(const ScalarObjective& objective, Tensor& input, double h = 1e-6);

}  // namespace sdvae
