#include "sdvae/flow.hpp"

#include "sdvae/errors.hpp"

namespace sdvae {

FlowStep FlowStep::init(std::size_t dim, Rng& rng, double weight_scale, double gate_bias) {
    std::normal_distribution<double> normal(0.0, weight_scale);
    FlowStep step{Tensor(dim, dim), Tensor(1, dim, gate_bias), Tensor(dim, dim), Tensor(1, dim, 0.0)};
    const Tensor mask = autoregressive_mask(dim);
    for (std::size_t i = 0; i < dim * dim; ++i) {
        step.gate_weight[i] = mask[i] * normal(rng);
        step.shift_weight[i] = mask[i] * normal(rng);
    }
    return step;
}

Tensor autoregressive_mask(std::size_t dim) {
    Tensor mask(dim, dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j)
        for (std::size_t i = j + 1; i < dim; ++i) mask(j, i) = 1.0;
    return mask;
}

FlowState flow_init(const GaussianPosterior& g, const NoiseSample& n, std::size_t length) {
    Graph& graph = g.mu.graph();
    FlowState s;
    s.u = reparam_sample(g, n);
    s.base_log_density = reparam_log_density(g, n);
    s.log_q_correction = graph.constant(Tensor(g.mu.shape().rows, 1, 0.0));
    s.t = 0;
    s.length = length;
    return s;
}

FlowState flow_apply(const FlowState& s, Var delta, Var shift) {
    if (s.t >= s.length)
        throw UsageError("flow_step: chain already has " + std::to_string(s.t) + " of " + std::to_string(s.length) +
                         " steps");
    FlowState next = s;
    next.u = add(mul(delta, s.u), shift);
    next.log_q_correction = sub(s.log_q_correction, row_sum(log(delta)));
    next.t = s.t + 1;
    return next;
}

FlowStepOutputs flow_step_outputs(Var u, const FlowStepVars& step) {
    Graph& graph = u.graph();
    const std::size_t dim = u.shape().cols;
    if (step.gate_weight.shape() != Shape{dim, dim})
        throw ShapeError("flow_step: weights " + step.gate_weight.shape().str() + " for latent of width " +
                         std::to_string(dim));
    Var mask = graph.constant(autoregressive_mask(dim));
    Var gate = add(matmul(u, mul(step.gate_weight, mask)), step.gate_bias);
    Var shift = add(matmul(u, mul(step.shift_weight, mask)), step.shift_bias);
    // log sigmoid(z) = -softplus(-z), finite even where sigmoid rounds to 0.
    return {sigmoid(gate), shift, scale(softplus(scale(gate, -1.0)), -1.0)};
}

FlowState flow_step(const FlowState& s, const FlowStepVars& step) {
    if (s.t >= s.length)
        throw UsageError("flow_step: chain already has " + std::to_string(s.t) + " of " + std::to_string(s.length) +
                         " steps");
    FlowStepOutputs out = flow_step_outputs(s.u, step);
    FlowState next = s;
    next.u = add(mul(out.delta, s.u), out.shift);
    next.log_q_correction = sub(s.log_q_correction, row_sum(out.log_delta));
    next.t = s.t + 1;
    return next;
}

Var flow_kl_u(const FlowState& s) {
    if (s.t != s.length)
        throw UsageError("flow_kl_u: chain incomplete (" + std::to_string(s.t) + " of " + std::to_string(s.length) +
                         " steps)");
    return sub(add(s.base_log_density, s.log_q_correction), standard_normal_log_density(s.u));
}

}  // namespace sdvae
