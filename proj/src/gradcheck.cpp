#include "sdvae/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

#include "sdvae/errors.hpp"

namespace sdvae {

namespace {

double evaluate(const ScalarObjective& objective, std::span<Tensor* const> inputs) {
    Graph graph;
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (Tensor* t : inputs) vars.push_back(graph.constant(*t));
    Var root = objective(graph, vars);
    return root.item();
}

}  // namespace

GradCheckReport finite_difference_check(const ScalarObjective& objective, std::span<Tensor* const> inputs,
                                        double h) {
    if (!(h > 0.0 && h <= 1e-3)) throw UsageError("finite_difference_check: h must lie in (0, 1e-3]");

    std::vector<std::vector<double>> analytic;
    double base = 0.0;
    {
        Graph graph;
        std::vector<Var> vars;
        for (Tensor* t : inputs) {
            t->zero_grad();
            vars.push_back(graph.parameter(*t));
        }
        Var root = objective(graph, vars);
        graph.backward(root);
        base = root.item();
        for (Tensor* t : inputs) analytic.emplace_back(t->grad().begin(), t->grad().end());
    }

    const double again = evaluate(objective, inputs);
    if (std::bit_cast<std::uint64_t>(again) != std::bit_cast<std::uint64_t>(base))
        throw OracleError("objective is not deterministic: repeated evaluation gave " + std::to_string(base) +
                          " then " + std::to_string(again));

    GradCheckReport report;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& t = *inputs[k];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double saved = t[i];
            t[i] = saved + h;
            const double plus = evaluate(objective, inputs);
            t[i] = saved - h;
            const double minus = evaluate(objective, inputs);
            t[i] = saved;

            const double numeric = (plus - minus) / (2.0 * h);
            const double forward_slope = (plus - base) / h;
            const double backward_slope = (base - minus) / h;
            const double scale = std::max(1.0, std::abs(numeric));
            if (std::abs(forward_slope - backward_slope) > 1e-3 * scale) {
                ++report.skipped_kinks;
                continue;
            }
            ++report.coordinates;
            const double err = std::abs(analytic[k][i] - numeric) / scale;
            if (err > report.max_rel_error || report.worst.empty()) {
                report.max_rel_error = std::max(report.max_rel_error, err);
                if (err >= report.max_rel_error)
                    report.worst = "input[" + std::to_string(k) + "](" + std::to_string(i / t.cols()) + "," +
                                   std::to_string(i % t.cols()) + ")";
            }
        }
    }
    return report;
}

GradCheckReport finite_difference_check(const ScalarObjective& objective, Tensor& input, double h) {
    Tensor* inputs[] = {&input};
    return finite_difference_check(objective, std::span<Tensor* const>(inputs), h);
}

}  // namespace sdvae
