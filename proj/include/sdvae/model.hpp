#pragma once

// SDVAE networks and objectives.
//
// The encoder is a shared tanh MLP trunk with two heads: a Gaussian head for
// the non-interpretable latent u (mean and log-variance) and a categorical
// head for the disentangled latent v (K logits). The decoder maps u || v to
// pixel logits. Optional IAF steps transform u after sampling.
//
// All objectives are written in minimization form: `total` is the negated
// minibatch mean of the per-row objective.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdvae/distributions.hpp"
#include "sdvae/flow.hpp"

namespace sdvae {

enum class Variant { Sdvae1, Sdvae2 };
enum class Likelihood { Bernoulli, Gaussian };
// What the decoder receives for v: the probability row, or a sampled one-hot row.
enum class VDecode { Expected, Sample };
// Baseline c of the score-function term: mean of the v probability row (1/K),
// or beta1 times the minibatch mean reward.
enum class BaselineKind { VMean, BatchReward };
// Sign handling of the score-function coefficient on labeled rows.
enum class LabeledAdvantage { Magnitude, Signed };

struct ModelConfig {
    std::size_t dim_x = 784;
    std::size_t dim_u = 50;
    std::size_t classes = 10;
    std::vector<std::size_t> trunk_hidden{256, 128};
    std::size_t decoder_hidden = 128;
    std::size_t flow_length = 0;  // IAF steps actually applied; 0 disables the flow
    double dropout = 0.1;
    Likelihood likelihood = Likelihood::Bernoulli;

    void validate() const;
};

struct ObjectiveConfig {
    double lambda = 0.1;
    double mu = 1.0;
    double beta1 = 0.1;
    double beta2 = 1.0;
    VDecode v_decode = VDecode::Expected;
    BaselineKind baseline = BaselineKind::VMean;
    LabeledAdvantage labeled_advantage = LabeledAdvantage::Magnitude;

    void validate() const;
};

struct Linear {
    Tensor weight;  // in x out
    Tensor bias;    // 1 x out
};

using NamedTensor = std::pair<std::string, Tensor*>;

struct ModelParams {
    ModelConfig config;
    std::vector<Linear> trunk;
    Linear u_head;  // -> [mu | log-variance], 2 * dim_u wide
    Linear v_head;  // -> K logits
    Linear decoder_hidden;
    Linear decoder_out;
    std::vector<FlowStep> flow;

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    // Stable order; also the checkpoint order.
    std::vector<NamedTensor> named_tensors();
    std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

    void zero_grad();
    bool all_finite() const;
    // Bitwise equality of every tensor and of the layout.
    bool same_values(const ModelParams& other) const;
};

struct LinearVars {
    Var weight;
    Var bias;
};

// ModelParams as graph nodes.
struct BoundParams {
    const ModelConfig* config = nullptr;
    std::vector<LinearVars> trunk;
    LinearVars u_head;
    LinearVars v_head;
    LinearVars decoder_hidden;
    LinearVars decoder_out;
    std::vector<FlowStepVars> flow;

    // Trainable binding: backward writes into the params' grad slots.
    static BoundParams bind(Graph& graph, ModelParams& params);
    // Inference binding: copies, no gradient export.
    static BoundParams constants(Graph& graph, const ModelParams& params);
    // Nodes given in `ModelParams::named_tensors` order.
    static BoundParams from_vars(const ModelParams& layout, std::span<const Var> vars);
};

// Minibatch. Unlabeled rows carry no label at all.
struct Batch {
    Tensor x;
    std::vector<std::optional<std::size_t>> labels;

    std::size_t rows() const { return x.rows(); }
    std::size_t labeled_count() const;
    // One-hot rows for labeled examples, zero rows otherwise.
    Tensor label_selection(std::size_t classes) const;

    static Batch unlabeled(Tensor x);
    static Batch labeled(Tensor x, std::span<const std::size_t> labels);
    // Rows of `a` followed by rows of `b`.
    static Batch concat(const Batch& a, const Batch& b);
};

// All randomness one minibatch consumes, drawn up front so every loss is a
// deterministic function of (params, batch, noise).
struct BatchNoise {
    NoiseSample eps;                  // batch x dim_u
    std::vector<double> v_uniform;    // one uniform per row for sampling v
    Tensor dropout_mask;              // batch x trunk width, already scaled; empty = no dropout
    std::optional<std::vector<std::size_t>> v_fixed;  // overrides the v draw when set

    static BatchNoise draw(std::size_t rows, const ModelConfig& config, Rng& rng, bool training = true);
    // eps = 0, no dropout; used for evaluation paths.
    static BatchNoise deterministic(std::size_t rows, const ModelConfig& config);
    // Rows of `a` followed by rows of `b`.
    static BatchNoise concat(const BatchNoise& a, const BatchNoise& b);
};

struct Encoded {
    GaussianPosterior u;
    CategoricalPosterior v;
};

struct LatentPair {
    Var u;  // after the flow
    GaussianPosterior u_posterior;
    CategoricalPosterior v;
    std::vector<std::size_t> v_sample;
    Tensor v_sample_one_hot;
    Var decoder_v;  // what the decoder actually received for v
    Var kl_u;
    Var kl_v;
};

// Per-row nodes are batch x 1; `total` is 1x1. Terms a given objective does
// not use are left invalid (default-constructed Var).
struct LossBreakdown {
    LatentPair latent;
    Var re;
    Var kl_u;
    Var kl_v;
    Var elbo;        // re - lambda (kl_u + kl_v)
    Var constraint;  // U, or the score-function surrogate
    Var entropy;
    Var reward;      // re - (kl_u + kl_v), constant
    Var baseline;    // c, constant
    Var objective;   // per-row quantity being maximized
    Var total;       // -mean(objective)
};

Encoded encode(const BoundParams& p, const Tensor& x, const Tensor* dropout_mask = nullptr);
Var decode(const BoundParams& p, Var u, Var v);

// Encode, flow, decode; fills latent, re, kl_u, kl_v and elbo.
LossBreakdown elbo_terms(const BoundParams& p, const Tensor& x, const BatchNoise& noise,
                         const ObjectiveConfig& config);

LossBreakdown sdvae1_loss(const BoundParams& p, const Batch& batch, const BatchNoise& noise,
                          const ObjectiveConfig& config);
// `frozen_reward` (batch x 1), when given, replaces the computed reward R so
// finite differences see a fixed score-function coefficient.
LossBreakdown sdvae2_loss(const BoundParams& p, const Batch& batch, const BatchNoise& noise,
                          const ObjectiveConfig& config, const Tensor* frozen_reward = nullptr);
LossBreakdown unlabeled_loss(const BoundParams& p, const Batch& batch, const BatchNoise& noise,
                             const ObjectiveConfig& config);
LossBreakdown variant_loss(Variant variant, const BoundParams& p, const Batch& batch, const BatchNoise& noise,
                           const ObjectiveConfig& config);

// advantage (batch x 1, constant) * sum_k selection_k log q_k. Its gradient is
// the score-function estimate advantage * grad log q(selected | x).
Var score_function_surrogate(const CategoricalPosterior& v, const Tensor& advantage, const Tensor& selection);

// Index of the largest entry of each row; ties go to the lowest index.
std::vector<std::size_t> argmax_rows(const Tensor& t);
std::vector<std::size_t> predict(const ModelParams& params, const Tensor& x);

enum class LatentMask { None, MaskU, MaskV };

struct Reconstruction {
    Tensor pixel_means;  // sigmoid(logits) for Bernoulli, the mean for Gaussian
    Tensor loglik;       // batch x 1 reconstruction log-likelihood
};

// Deterministic reconstruction: u from the posterior mean pushed through the
// flow, v as the probability row (Expected) or its argmax one-hot (Sample);
// the masked latent is replaced by zeros.
Reconstruction reconstruct(const ModelParams& params, const Tensor& x, LatentMask mask, VDecode v_decode);

struct LatentSummary {
    Tensor v_probs;  // batch x K
    Tensor u_mean;   // batch x dim_u
};
LatentSummary infer_latents(const ModelParams& params, const Tensor& x);

}  // namespace sdvae
