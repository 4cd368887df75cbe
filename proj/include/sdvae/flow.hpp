#pragma once

// Inverse autoregressive flow over the non-interpretable latent u.
//
// Each step maps u_{t-1} to u_t = delta_t * u_{t-1} + pi_t, where
// (delta_t, pi_t) come from one masked affine layer of u_{t-1}: coordinate i
// only sees coordinates j < i, so the Jacobian is lower triangular with
// diagonal delta_t and log|det| = sum_i log delta_{t,i}. delta_t is a sigmoid
// gate, so it lies in (0, 1).
//
// FlowState tracks log q(u_t | x) as base density + correction, where the
// correction is -sum over steps of sum_i log delta_{t,i}.

#include <cstddef>

#include "sdvae/distributions.hpp"

namespace sdvae {

// Parameters of one autoregressive step. Weights are dim x dim and used as
// u (batch x dim) * (W .* mask); biases are 1 x dim.
struct FlowStep {
    Tensor gate_weight;
    Tensor gate_bias;
    Tensor shift_weight;
    Tensor shift_bias;

    // Small random weights; gate bias at +1 so delta starts near sigmoid(1).
    static FlowStep init(std::size_t dim, Rng& rng, double weight_scale = 0.01, double gate_bias = 1.0);
    std::size_t dim() const { return gate_weight.rows(); }
};

// Strictly lower-triangular dependency mask: mask(j, i) = 1 iff j < i.
Tensor autoregressive_mask(std::size_t dim);

// Graph-bound view of a FlowStep.
struct FlowStepVars {
    Var gate_weight;
    Var gate_bias;
    Var shift_weight;
    Var shift_bias;
};

struct FlowState {
    Var u;
    Var base_log_density;  // log q(u_0 | x)
    Var log_q_correction;  // -sum_t sum_i log delta_{t,i}
    std::size_t t = 0;
    std::size_t length = 0;
};

// u_0 = mu + sigma * eps with zero correction; `length` is the configured T.
FlowState flow_init(const GaussianPosterior& g, const NoiseSample& n, std::size_t length);

// Applies one step with explicitly given delta (> 0) and shift.
FlowState flow_apply(const FlowState& s, Var delta, Var shift);

// Gate and shift outputs of `step` for input u: (delta, pi, log delta).
struct FlowStepOutputs {
    Var delta;
    Var shift;
    Var log_delta;
};
FlowStepOutputs flow_step_outputs(Var u, const FlowStepVars& step);

FlowState flow_step(const FlowState& s, const FlowStepVars& step);

// Single-sample estimate log q(u_T|x) - log p(u_T) with a standard-normal prior.
Var flow_kl_u(const FlowState& s);

}  // namespace sdvae
