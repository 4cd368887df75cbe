#pragma once

// Probability pieces of the two-latent bound: diagonal Gaussian posterior over
// u with a standard-normal prior, categorical posterior over v with a uniform
// prior, and the pixel likelihoods used for the reconstruction term.
//
// Every function returns per-example quantities as batch x 1 nodes.

#include <cstdint>
#include <random>

#include "sdvae/autodiff.hpp"

namespace sdvae {

using Rng = std::mt19937_64;

struct GaussianPosterior {
    Var mu;
    Var sigma;

    // sigma = exp(raw / 2), raw read as a log-variance.
    static GaussianPosterior from_log_variance(Var mu, Var log_variance);
};

struct CategoricalPosterior {
    Var logits;
    Var probs;
    Var log_probs;

    static CategoricalPosterior from_logits(Var logits);
    std::size_t classes() const { return logits.shape().cols; }
};

// Standard-normal draws that can be regenerated bit-for-bit from `seed`.
struct NoiseSample {
    Tensor eps;
    std::uint64_t seed = 0;

    static NoiseSample draw(std::size_t rows, std::size_t cols, std::uint64_t seed);
    static NoiseSample zeros(std::size_t rows, std::size_t cols);
};

// mu + sigma * eps, eps held constant.
Var reparam_sample(const GaussianPosterior& g, const NoiseSample& n);

// KL(N(mu, sigma^2) || N(0, I)) = -1/2 sum(1 + 2 log sigma - mu^2 - sigma^2).
Var gaussian_kl_standard(const GaussianPosterior& g);

// KL(q || Uniform(K)) = log K - H(q).
Var categorical_kl_uniform(const CategoricalPosterior& c);

Var categorical_entropy(const CategoricalPosterior& c);

// sum_i y_i log q_i. `y` rows must be one-hot.
Var cross_entropy_constraint(const CategoricalPosterior& c, const Tensor& y);

// sum_i s_i log q_i for an arbitrary constant selection matrix; rows of zeros give 0.
Var selected_log_prob(const CategoricalPosterior& c, const Tensor& selection);

// sum over pixels of x log sigmoid(l) + (1 - x) log(1 - sigmoid(l)), in logit form.
Var bernoulli_recon_loglik(Var logits, const Tensor& x);

// Unit-variance Gaussian log-likelihood with `mean` as the decoder output.
Var gaussian_recon_loglik(Var mean, const Tensor& x);

// log N(u; 0, I) per row.
Var standard_normal_log_density(Var u);

// Diagonal Gaussian log-density of mu + sigma * eps evaluated at that point.
Var reparam_log_density(const GaussianPosterior& g, const NoiseSample& n);

// Inverse-CDF draw of one class per row from `probs` using uniforms in [0,1).
std::vector<std::size_t> sample_categorical(const Tensor& probs, std::span<const double> uniforms);

}  // namespace sdvae
