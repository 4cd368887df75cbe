#include "sdvae/distributions.hpp"

#include <cmath>
#include <numbers>

#include "sdvae/errors.hpp"

namespace sdvae {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

void require_same_shape(const char* what, const Shape& a, const Shape& b) {
    if (!(a == b)) throw ShapeError(std::string(what) + ": shapes " + a.str() + " and " + b.str() + " differ");
}

void require_positive_sigma(const GaussianPosterior& g) {
    for (double s : g.sigma.value().values())
        if (!(s > 0.0)) throw DomainError("gaussian posterior: sigma must be positive, got " + std::to_string(s));
}

}  // namespace

GaussianPosterior GaussianPosterior::from_log_variance(Var mu, Var log_variance) {
    require_same_shape("gaussian posterior", mu.shape(), log_variance.shape());
    return {mu, exp(scale(log_variance, 0.5))};
}

CategoricalPosterior CategoricalPosterior::from_logits(Var logits) {
    return {logits, softmax_rows(logits), log_softmax_rows(logits)};
}

NoiseSample NoiseSample::draw(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor eps(rows, cols);
    for (double& v : eps.values()) v = normal(rng);
    return {std::move(eps), seed};
}

NoiseSample NoiseSample::zeros(std::size_t rows, std::size_t cols) { return {Tensor(rows, cols, 0.0), 0}; }

Var reparam_sample(const GaussianPosterior& g, const NoiseSample& n) {
    require_same_shape("reparam_sample", g.mu.shape(), g.sigma.shape());
    require_same_shape("reparam_sample", g.mu.shape(), n.eps.shape());
    Var eps = g.mu.graph().constant(n.eps);
    return add(g.mu, mul(g.sigma, eps));
}

Var gaussian_kl_standard(const GaussianPosterior& g) {
    require_same_shape("gaussian_kl_standard", g.mu.shape(), g.sigma.shape());
    require_positive_sigma(g);
    Var inner = add_scalar(sub(sub(scale(log(g.sigma), 2.0), mul(g.mu, g.mu)), mul(g.sigma, g.sigma)), 1.0);
    return scale(row_sum(inner), -0.5);
}

Var categorical_kl_uniform(const CategoricalPosterior& c) {
    // sum_i q_i (log q_i + log K): exactly zero on a uniform row.
    const double log_k = std::log(static_cast<double>(c.classes()));
    return row_sum(mul(c.probs, add_scalar(c.log_probs, log_k)));
}

Var categorical_entropy(const CategoricalPosterior& c) { return scale(row_sum(mul(c.probs, c.log_probs)), -1.0); }

Var selected_log_prob(const CategoricalPosterior& c, const Tensor& selection) {
    require_same_shape("selected_log_prob", c.log_probs.shape(), selection.shape());
    return row_sum(mul(c.log_probs, c.logits.graph().constant(selection)));
}

Var cross_entropy_constraint(const CategoricalPosterior& c, const Tensor& y) {
    require_same_shape("cross_entropy_constraint", c.log_probs.shape(), y.shape());
    for (std::size_t r = 0; r < y.rows(); ++r) {
        std::size_t ones = 0;
        for (std::size_t k = 0; k < y.cols(); ++k) {
            const double v = y(r, k);
            if (v == 1.0) ++ones;
            else if (v != 0.0) ones = 2;
        }
        if (ones != 1) throw ValidationError("cross_entropy_constraint: label row " + std::to_string(r) + " is not one-hot");
    }
    return selected_log_prob(c, y);
}

Var bernoulli_recon_loglik(Var logits, const Tensor& x) {
    require_same_shape("bernoulli_recon_loglik", logits.shape(), x.shape());
    for (double v : x.values())
        if (!(v >= 0.0 && v <= 1.0))
            throw ValidationError("bernoulli_recon_loglik: target " + std::to_string(v) + " outside [0,1]");
    // x*l - softplus(l) == x log sigmoid(l) + (1-x) log(1 - sigmoid(l))
    Var target = logits.graph().constant(x);
    return row_sum(sub(mul(target, logits), softplus(logits)));
}

Var gaussian_recon_loglik(Var mean, const Tensor& x) {
    require_same_shape("gaussian_recon_loglik", mean.shape(), x.shape());
    Var diff = sub(mean, mean.graph().constant(x));
    return row_sum(add_scalar(scale(mul(diff, diff), -0.5), -kHalfLog2Pi));
}

Var standard_normal_log_density(Var u) { return row_sum(add_scalar(scale(mul(u, u), -0.5), -kHalfLog2Pi)); }

Var reparam_log_density(const GaussianPosterior& g, const NoiseSample& n) {
    require_same_shape("reparam_log_density", g.sigma.shape(), n.eps.shape());
    require_positive_sigma(g);
    // log N(mu + sigma*eps; mu, sigma^2) = log N(eps; 0, I) - sum log sigma
    Var eps = g.mu.graph().constant(n.eps);
    return sub(standard_normal_log_density(eps), row_sum(log(g.sigma)));
}

std::vector<std::size_t> sample_categorical(const Tensor& probs, std::span<const double> uniforms) {
    if (uniforms.size() != probs.rows())
        throw ShapeError("sample_categorical: " + std::to_string(uniforms.size()) + " uniforms for " +
                         std::to_string(probs.rows()) + " rows");
    std::vector<std::size_t> out(probs.rows(), probs.cols() - 1);
    for (std::size_t r = 0; r < probs.rows(); ++r) {
        double cumulative = 0.0;
        for (std::size_t k = 0; k < probs.cols(); ++k) {
            cumulative += probs(r, k);
            if (uniforms[r] < cumulative) {
                out[r] = k;
                break;
            }
        }
    }
    return out;
}

}  // namespace sdvae
