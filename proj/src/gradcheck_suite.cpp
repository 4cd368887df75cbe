#include "sdvae/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <random>

#include "sdvae/model.hpp"

namespace sdvae {

namespace {

using Unary = Var (*)(Var);

struct Sampler {
    Rng rng;

    std::size_t extent(std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    }
    Tensor uniform(std::size_t rows, std::size_t cols, double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        Tensor t(rows, cols);
        for (double& v : t.values()) v = d(rng);
        return t;
    }
    // Values away from the relu kink at 0.
    Tensor off_kink(std::size_t rows, std::size_t cols) {
        Tensor t = uniform(rows, cols, -2.0, 2.0);
        for (double& v : t.values())
            while (std::abs(v) < 1e-4) v = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        return t;
    }
};

// sum(op(x) * R) with a fixed random R makes every output coordinate matter.
Var weighted(Var y, const Tensor& weights) { return sum(mul(y, y.graph().constant(weights))); }

void record(GradCheckSuiteResult& result, std::string name, const GradCheckReport& report) {
    result.max_rel_error = std::max(result.max_rel_error, report.max_rel_error);
    auto it = std::find_if(result.entries.begin(), result.entries.end(),
                           [&](const GradCheckEntry& e) { return e.name == name; });
    if (it == result.entries.end()) {
        result.entries.push_back({std::move(name), report});
        return;
    }
    GradCheckReport& agg = it->report;
    agg.coordinates += report.coordinates;
    agg.skipped_kinks += report.skipped_kinks;
    if (report.max_rel_error >= agg.max_rel_error) {
        agg.max_rel_error = report.max_rel_error;
        agg.worst = report.worst;
    }
}

void check_primitives(GradCheckSuiteResult& result, Sampler& s, std::size_t trials, double h) {
    const std::pair<const char*, Unary> unary[] = {
        {"sigmoid", sigmoid},   {"tanh", tanh}, {"exp", exp},
        {"softplus", softplus}, {"softmax_rows", softmax_rows}, {"log_softmax_rows", log_softmax_rows},
        {"row_sum", row_sum},
    };
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t r = s.extent(1, 4), c = s.extent(1, 4), k = s.extent(1, 4);
        const Tensor w_rc = s.uniform(r, c, -1.0, 1.0);

        for (const auto& [name, op] : unary) {
            Tensor x = s.uniform(r, c, -2.0, 2.0);
            const Tensor w = name == std::string("row_sum") ? s.uniform(r, 1, -1.0, 1.0) : w_rc;
            record(result, name,
                   finite_difference_check([&, op = op](Graph&, std::span<const Var> in) { return weighted(op(in[0]), w); },
                                           x, h));
        }
        {
            Tensor x = s.off_kink(r, c);
            record(result, "relu",
                   finite_difference_check([&](Graph&, std::span<const Var> in) { return weighted(relu(in[0]), w_rc); },
                                           x, h));
        }
        {
            Tensor x = s.uniform(r, c, 0.2, 3.0);
            record(result, "log",
                   finite_difference_check([&](Graph&, std::span<const Var> in) { return weighted(log(in[0]), w_rc); },
                                           x, h));
        }
        {
            Tensor x = s.uniform(r, c, -2.0, 2.0);
            const double a = s.uniform(1, 1, -3.0, 3.0).item();
            record(result, "scale",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(scale(in[0], a), w_rc); }, x, h));
            record(result, "add_scalar",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(add_scalar(in[0], a), w_rc); }, x, h));
            record(result, "sum",
                   finite_difference_check([&](Graph&, std::span<const Var> in) { return scale(sum(in[0]), a); }, x, h));
            record(result, "mean",
                   finite_difference_check([&](Graph&, std::span<const Var> in) { return scale(mean(in[0]), a); }, x, h));
            const std::size_t begin = s.extent(0, c - 1), end = s.extent(begin + 1, c);
            const Tensor w = s.uniform(r, end - begin, -1.0, 1.0);
            record(result, "slice_cols",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(slice_cols(in[0], begin, end), w); }, x,
                       h));
        }
        {
            Tensor a = s.uniform(r, c, -2.0, 2.0), b = s.uniform(r, c, -2.0, 2.0);
            Tensor* both[] = {&a, &b};
            record(result, "add",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(add(in[0], in[1]), w_rc); }, both, h));
            record(result, "sub",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(sub(in[0], in[1]), w_rc); }, both, h));
            record(result, "mul",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(mul(in[0], in[1]), w_rc); }, both, h));
        }
        {
            Tensor a = s.uniform(r, c, -2.0, 2.0), bias = s.uniform(1, c, -2.0, 2.0);
            Tensor* both[] = {&a, &bias};
            record(result, "add_row_broadcast",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(add(in[0], in[1]), w_rc); }, both, h));
        }
        {
            Tensor a = s.uniform(r, k, -2.0, 2.0), b = s.uniform(k, c, -2.0, 2.0);
            Tensor* both[] = {&a, &b};
            record(result, "matmul",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(matmul(in[0], in[1]), w_rc); }, both,
                       h));
        }
        {
            Tensor a = s.uniform(r, c, -2.0, 2.0), b = s.uniform(r, k, -2.0, 2.0);
            Tensor* both[] = {&a, &b};
            const Tensor w = s.uniform(r, c + k, -1.0, 1.0);
            record(result, "concat_cols",
                   finite_difference_check(
                       [&](Graph&, std::span<const Var> in) { return weighted(concat_cols(in[0], in[1]), w); }, both,
                       h));
        }
    }
}

void check_objectives(GradCheckSuiteResult& result, Sampler& s, double h) {
    const std::size_t rows = 3;
    for (std::size_t flow_length : {std::size_t{0}, std::size_t{1}}) {
        ModelConfig cfg;
        cfg.dim_x = 4;
        cfg.dim_u = 2;
        cfg.classes = 2;
        cfg.trunk_hidden = {3};
        cfg.decoder_hidden = 3;
        cfg.flow_length = flow_length;
        cfg.dropout = 0.25;
        ModelParams params = ModelParams::init(cfg, s.rng());
        // Push the flow off its initialization so its weights carry signal.
        for (auto& step : params.flow) {
            step.gate_weight = s.uniform(cfg.dim_u, cfg.dim_u, -0.5, 0.5);
            step.shift_weight = s.uniform(cfg.dim_u, cfg.dim_u, -0.5, 0.5);
        }

        Tensor x = s.uniform(rows, cfg.dim_x, 0.0, 1.0);
        Batch mixed = Batch::unlabeled(x);
        mixed.labels = {std::size_t{0}, std::nullopt, std::size_t{1}};
        const Batch unlabeled = Batch::unlabeled(x);

        BatchNoise noise = BatchNoise::draw(rows, cfg, s.rng, true);
        noise.v_fixed = std::vector<std::size_t>{1, 0, 1};
        const Tensor frozen_reward = s.uniform(rows, 1, -8.0, -1.0);

        std::vector<Tensor*> inputs;
        for (auto& [name, t] : params.named_tensors()) inputs.push_back(t);

        const std::string suffix = flow_length == 0 ? "" : "+iaf";
        for (VDecode decode_mode : {VDecode::Expected, VDecode::Sample}) {
            ObjectiveConfig oc;
            oc.v_decode = decode_mode;
            const std::string tag = (decode_mode == VDecode::Expected ? "[expected]" : "[sample]") + suffix;

            auto objective = [&](auto loss) {
                return [&, loss](Graph&, std::span<const Var> in) {
                    return loss(BoundParams::from_vars(params, in)).total;
                };
            };
            record(result, "elbo" + tag, finite_difference_check(objective([&](const BoundParams& p) {
                                                                     LossBreakdown l = elbo_terms(p, x, noise, oc);
                                                                     l.total = scale(mean(l.elbo), -1.0);
                                                                     return l;
                                                                 }),
                                                                 inputs, h));
            record(result, "sdvae1" + tag,
                   finite_difference_check(
                       objective([&](const BoundParams& p) { return sdvae1_loss(p, mixed, noise, oc); }), inputs, h));
            for (LabeledAdvantage adv : {LabeledAdvantage::Magnitude, LabeledAdvantage::Signed}) {
                ObjectiveConfig o2 = oc;
                o2.labeled_advantage = adv;
                const std::string adv_tag = adv == LabeledAdvantage::Magnitude ? "" : "[signed]";
                record(result, "sdvae2" + adv_tag + tag,
                       finite_difference_check(objective([&, o2](const BoundParams& p) {
                                                   return sdvae2_loss(p, mixed, noise, o2, &frozen_reward);
                                               }),
                                               inputs, h));
            }
            record(result, "unlabeled" + tag,
                   finite_difference_check(
                       objective([&](const BoundParams& p) { return unlabeled_loss(p, unlabeled, noise, oc); }),
                       inputs, h));
        }
    }
}

}  // namespace

GradCheckSuiteResult run_gradcheck_suite(std::uint64_t seed, std::size_t trials, double h) {
    const auto start = std::chrono::steady_clock::now();
    GradCheckSuiteResult result;
    Sampler sampler{Rng(seed)};
    check_primitives(result, sampler, trials, h);
    check_objectives(result, sampler, h);
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace sdvae
