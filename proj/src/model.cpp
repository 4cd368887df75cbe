#include "sdvae/model.hpp"

#include <algorithm>
#include <cmath>

#include "sdvae/errors.hpp"

namespace sdvae {

void ModelConfig::validate() const {
    if (dim_x == 0) throw ConfigError("dim_x", "must be positive");
    if (dim_u == 0) throw ConfigError("dim_u", "must be positive");
    if (classes == 0) throw ConfigError("classes", "must be positive");
    if (trunk_hidden.empty()) throw ConfigError("trunk_hidden", "needs at least one layer");
    for (std::size_t w : trunk_hidden)
        if (w == 0) throw ConfigError("trunk_hidden", "layer widths must be positive");
    if (decoder_hidden == 0) throw ConfigError("decoder_hidden", "must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout", "must lie in [0, 1)");
}

void ObjectiveConfig::validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be >= 0");
    if (!(mu >= 0.0)) throw ConfigError("mu", "must be >= 0");
    if (!(beta1 >= 0.0)) throw ConfigError("beta1", "must be >= 0");
    if (!(beta2 >= 0.0)) throw ConfigError("beta2", "must be >= 0");
}

namespace {

Linear glorot(std::size_t in, std::size_t out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    Linear layer{Tensor(in, out), Tensor(1, out, 0.0)};
    for (double& w : layer.weight.values()) w = uniform(rng);
    return layer;
}

Var affine(Var x, const LinearVars& layer) { return add(matmul(x, layer.weight), layer.bias); }

LinearVars bind_linear(Graph& g, Linear& l) { return {g.parameter(l.weight), g.parameter(l.bias)}; }
LinearVars const_linear(Graph& g, const Linear& l) { return {g.constant(l.weight), g.constant(l.bias)}; }

template <class Params, class BindLinear, class BindTensor>
BoundParams bind_with(Graph& g, Params& params, BindLinear bind_linear_fn, BindTensor bind_tensor) {
    BoundParams b;
    b.config = &params.config;
    for (auto& layer : params.trunk) b.trunk.push_back(bind_linear_fn(g, layer));
    b.u_head = bind_linear_fn(g, params.u_head);
    b.v_head = bind_linear_fn(g, params.v_head);
    b.decoder_hidden = bind_linear_fn(g, params.decoder_hidden);
    b.decoder_out = bind_linear_fn(g, params.decoder_out);
    for (auto& step : params.flow)
        b.flow.push_back({bind_tensor(g, step.gate_weight), bind_tensor(g, step.gate_bias),
                          bind_tensor(g, step.shift_weight), bind_tensor(g, step.shift_bias)});
    return b;
}

const ModelConfig& config_of(const BoundParams& p) {
    if (p.config == nullptr) throw UsageError("BoundParams without a model config");
    return *p.config;
}

Tensor values_of(Var v) { return v.value(); }

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ModelParams p;
    p.config = config;
    std::size_t width = config.dim_x;
    for (std::size_t h : config.trunk_hidden) {
        p.trunk.push_back(glorot(width, h, rng));
        width = h;
    }
    p.u_head = glorot(width, 2 * config.dim_u, rng);
    p.v_head = glorot(width, config.classes, rng);
    p.decoder_hidden = glorot(config.dim_u + config.classes, config.decoder_hidden, rng);
    p.decoder_out = glorot(config.decoder_hidden, config.dim_x, rng);
    for (std::size_t t = 0; t < config.flow_length; ++t) p.flow.push_back(FlowStep::init(config.dim_u, rng));
    return p;
}

std::vector<NamedTensor> ModelParams::named_tensors() {
    std::vector<NamedTensor> out;
    auto linear = [&out](const std::string& name, Linear& l) {
        out.emplace_back(name + ".weight", &l.weight);
        out.emplace_back(name + ".bias", &l.bias);
    };
    for (std::size_t i = 0; i < trunk.size(); ++i) linear("trunk." + std::to_string(i), trunk[i]);
    linear("u_head", u_head);
    linear("v_head", v_head);
    linear("decoder.hidden", decoder_hidden);
    linear("decoder.out", decoder_out);
    for (std::size_t t = 0; t < flow.size(); ++t) {
        const std::string prefix = "flow." + std::to_string(t) + ".";
        out.emplace_back(prefix + "gate_weight", &flow[t].gate_weight);
        out.emplace_back(prefix + "gate_bias", &flow[t].gate_bias);
        out.emplace_back(prefix + "shift_weight", &flow[t].shift_weight);
        out.emplace_back(prefix + "shift_bias", &flow[t].shift_bias);
    }
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_tensors() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (auto& [name, t] : const_cast<ModelParams*>(this)->named_tensors()) out.emplace_back(name, t);
    return out;
}

void ModelParams::zero_grad() {
    for (auto& [name, t] : named_tensors()) t->zero_grad();
}

bool ModelParams::all_finite() const {
    for (const auto& [name, t] : named_tensors())
        if (!t->all_finite()) return false;
    return true;
}

bool ModelParams::same_values(const ModelParams& other) const {
    auto a = named_tensors();
    auto b = other.named_tensors();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].first != b[i].first || !a[i].second->same_values(*b[i].second)) return false;
    return true;
}

BoundParams BoundParams::bind(Graph& graph, ModelParams& params) {
    return bind_with(graph, params, bind_linear, [](Graph& g, Tensor& t) { return g.parameter(t); });
}

BoundParams BoundParams::constants(Graph& graph, const ModelParams& params) {
    return bind_with(graph, params, const_linear, [](Graph& g, const Tensor& t) { return g.constant(t); });
}

BoundParams BoundParams::from_vars(const ModelParams& layout, std::span<const Var> vars) {
    const std::size_t expected = layout.named_tensors().size();
    if (vars.size() != expected)
        throw UsageError("from_vars: expected " + std::to_string(expected) + " nodes, got " + std::to_string(vars.size()));
    std::size_t next = 0;
    auto take = [&]() { return vars[next++]; };
    auto take_linear = [&]() {
        LinearVars l;
        l.weight = take();
        l.bias = take();
        return l;
    };
    BoundParams b;
    b.config = &layout.config;
    for (std::size_t i = 0; i < layout.trunk.size(); ++i) b.trunk.push_back(take_linear());
    b.u_head = take_linear();
    b.v_head = take_linear();
    b.decoder_hidden = take_linear();
    b.decoder_out = take_linear();
    for (std::size_t t = 0; t < layout.flow.size(); ++t) {
        FlowStepVars s;
        s.gate_weight = take();
        s.gate_bias = take();
        s.shift_weight = take();
        s.shift_bias = take();
        b.flow.push_back(s);
    }
    return b;
}

std::size_t Batch::labeled_count() const {
    return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](const auto& l) { return l.has_value(); }));
}

Tensor Batch::label_selection(std::size_t classes) const {
    Tensor s(rows(), classes, 0.0);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (!labels[r]) continue;
        if (*labels[r] >= classes)
            throw ValidationError("label " + std::to_string(*labels[r]) + " outside [0," + std::to_string(classes) + ")");
        s(r, *labels[r]) = 1.0;
    }
    return s;
}

Batch Batch::unlabeled(Tensor x) {
    Batch b{std::move(x), {}};
    b.labels.assign(b.x.rows(), std::nullopt);
    return b;
}

Batch Batch::labeled(Tensor x, std::span<const std::size_t> labels) {
    if (labels.size() != x.rows())
        throw ShapeError("batch of " + std::to_string(x.rows()) + " rows given " + std::to_string(labels.size()) + " labels");
    Batch b{std::move(x), {}};
    for (std::size_t l : labels) b.labels.emplace_back(l);
    return b;
}

namespace {

Tensor stack_rows(const Tensor& a, const Tensor& b) {
    if (a.empty()) return b;
    if (b.empty()) return a;
    if (a.cols() != b.cols()) throw ShapeError("stack_rows: " + a.shape().str() + " and " + b.shape().str());
    std::vector<double> v(a.values().begin(), a.values().end());
    v.insert(v.end(), b.values().begin(), b.values().end());
    return Tensor(a.rows() + b.rows(), a.cols(), std::move(v));
}

}  // namespace

Batch Batch::concat(const Batch& a, const Batch& b) {
    Batch out{stack_rows(a.x, b.x), a.labels};
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    return out;
}

BatchNoise BatchNoise::draw(std::size_t rows, const ModelConfig& config, Rng& rng, bool training) {
    BatchNoise n;
    n.eps = NoiseSample::draw(rows, config.dim_u, rng());
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    n.v_uniform.resize(rows);
    for (double& u : n.v_uniform) u = uniform(rng);
    if (training && config.dropout > 0.0) {
        const double keep = 1.0 - config.dropout;
        n.dropout_mask = Tensor(rows, config.trunk_hidden.back());
        for (double& m : n.dropout_mask.values()) m = uniform(rng) < keep ? 1.0 / keep : 0.0;
    }
    return n;
}

BatchNoise BatchNoise::deterministic(std::size_t rows, const ModelConfig& config) {
    BatchNoise n;
    n.eps = NoiseSample::zeros(rows, config.dim_u);
    n.v_uniform.assign(rows, 0.5);
    return n;
}

BatchNoise BatchNoise::concat(const BatchNoise& a, const BatchNoise& b) {
    BatchNoise n;
    n.eps = {stack_rows(a.eps.eps, b.eps.eps), a.eps.seed};
    n.v_uniform = a.v_uniform;
    n.v_uniform.insert(n.v_uniform.end(), b.v_uniform.begin(), b.v_uniform.end());
    if (a.dropout_mask.empty() != b.dropout_mask.empty())
        throw UsageError("BatchNoise::concat: dropout present on one side only");
    n.dropout_mask = stack_rows(a.dropout_mask, b.dropout_mask);
    if (a.v_fixed.has_value() != b.v_fixed.has_value())
        throw UsageError("BatchNoise::concat: fixed v present on one side only");
    if (a.v_fixed) {
        n.v_fixed = *a.v_fixed;
        n.v_fixed->insert(n.v_fixed->end(), b.v_fixed->begin(), b.v_fixed->end());
    }
    return n;
}

Encoded encode(const BoundParams& p, const Tensor& x, const Tensor* dropout_mask) {
    const ModelConfig& cfg = config_of(p);
    if (x.cols() != cfg.dim_x)
        throw ConfigError("dim_x", "input has " + std::to_string(x.cols()) + " columns, model expects " +
                                       std::to_string(cfg.dim_x));
    Graph& g = p.u_head.weight.graph();
    Var h = g.constant(x);
    for (const auto& layer : p.trunk) h = tanh(affine(h, layer));
    if (dropout_mask != nullptr && !dropout_mask->empty()) h = mul(h, g.constant(*dropout_mask));
    Var u_out = affine(h, p.u_head);
    Var mu = slice_cols(u_out, 0, cfg.dim_u);
    Var log_var = slice_cols(u_out, cfg.dim_u, 2 * cfg.dim_u);
    return {GaussianPosterior::from_log_variance(mu, log_var), CategoricalPosterior::from_logits(affine(h, p.v_head))};
}

Var decode(const BoundParams& p, Var u, Var v) {
    const ModelConfig& cfg = config_of(p);
    if (u.shape().cols != cfg.dim_u || v.shape().cols != cfg.classes || u.shape().rows != v.shape().rows)
        throw ShapeError("decode: u " + u.shape().str() + " and v " + v.shape().str() + " do not match dim_u=" +
                         std::to_string(cfg.dim_u) + ", K=" + std::to_string(cfg.classes));
    Var hidden = tanh(affine(concat_cols(u, v), p.decoder_hidden));
    return affine(hidden, p.decoder_out);
}

namespace {

Var recon_loglik(const ModelConfig& cfg, Var logits, const Tensor& x) {
    return cfg.likelihood == Likelihood::Bernoulli ? bernoulli_recon_loglik(logits, x) : gaussian_recon_loglik(logits, x);
}

}  // namespace

LossBreakdown elbo_terms(const BoundParams& p, const Tensor& x, const BatchNoise& noise, const ObjectiveConfig& config) {
    const ModelConfig& cfg = config_of(p);
    config.validate();
    Graph& g = p.u_head.weight.graph();
    const std::size_t rows = x.rows();
    if (noise.eps.eps.shape() != Shape{rows, cfg.dim_u} || noise.v_uniform.size() != rows)
        throw ShapeError("elbo_terms: noise does not match a batch of " + std::to_string(rows) + " rows");

    Encoded enc = encode(p, x, &noise.dropout_mask);
    LossBreakdown out;
    LatentPair& lat = out.latent;
    lat.u_posterior = enc.u;
    lat.v = enc.v;

    if (p.flow.size() != cfg.flow_length) throw UsageError("elbo_terms: flow steps do not match flow_length");
    if (cfg.flow_length == 0) {
        lat.u = reparam_sample(enc.u, noise.eps);
        lat.kl_u = gaussian_kl_standard(enc.u);
    } else {
        FlowState s = flow_init(enc.u, noise.eps, cfg.flow_length);
        for (const auto& step : p.flow) s = flow_step(s, step);
        lat.u = s.u;
        lat.kl_u = flow_kl_u(s);
    }
    lat.kl_v = categorical_kl_uniform(enc.v);

    if (noise.v_fixed) {
        if (noise.v_fixed->size() != rows) throw ShapeError("elbo_terms: fixed v has wrong length");
        lat.v_sample = *noise.v_fixed;
    } else {
        lat.v_sample = sample_categorical(enc.v.probs.value(), noise.v_uniform);
    }
    lat.v_sample_one_hot = one_hot(lat.v_sample, cfg.classes);
    lat.decoder_v = config.v_decode == VDecode::Sample ? g.constant(lat.v_sample_one_hot) : enc.v.probs;

    Var logits = decode(p, lat.u, lat.decoder_v);
    out.re = recon_loglik(cfg, logits, x);
    out.kl_u = lat.kl_u;
    out.kl_v = lat.kl_v;
    out.elbo = sub(out.re, scale(add(out.kl_u, out.kl_v), config.lambda));
    return out;
}

LossBreakdown sdvae1_loss(const BoundParams& p, const Batch& batch, const BatchNoise& noise,
                          const ObjectiveConfig& config) {
    if (!(config.mu >= 0.0)) throw ConfigError("mu", "must be >= 0");
    LossBreakdown out = elbo_terms(p, batch.x, noise, config);
    // Unlabeled rows select nothing, so their U is exactly 0.
    out.constraint = selected_log_prob(out.latent.v, batch.label_selection(config_of(p).classes));
    out.objective = add(out.elbo, scale(out.constraint, config.mu));
    out.total = scale(mean(out.objective), -1.0);
    return out;
}

Var score_function_surrogate(const CategoricalPosterior& v, const Tensor& advantage, const Tensor& selection) {
    if (advantage.shape() != Shape{selection.rows(), 1})
        throw ShapeError("score_function_surrogate: advantage " + advantage.shape().str() + " for selection " +
                         selection.shape().str());
    return mul(v.logits.graph().constant(advantage), selected_log_prob(v, selection));
}

LossBreakdown sdvae2_loss(const BoundParams& p, const Batch& batch, const BatchNoise& noise,
                          const ObjectiveConfig& config, const Tensor* frozen_reward) {
    config.validate();
    const std::size_t k = config_of(p).classes;
    Graph& g = p.u_head.weight.graph();
    LossBreakdown out = elbo_terms(p, batch.x, noise, config);
    out.entropy = categorical_entropy(out.latent.v);

    const std::size_t rows = batch.rows();
    const Tensor re = values_of(out.re);
    const Tensor kl_u = values_of(out.kl_u);
    const Tensor kl_v = values_of(out.kl_v);
    const Tensor& probs = out.latent.v.probs.value();
    Tensor reward(rows, 1);
    for (std::size_t r = 0; r < rows; ++r) reward[r] = re[r] - (kl_u[r] + kl_v[r]);
    if (frozen_reward != nullptr) {
        if (frozen_reward->shape() != reward.shape()) throw ShapeError("sdvae2_loss: frozen reward has wrong shape");
        reward = *frozen_reward;
    }

    Tensor baseline(rows, 1);
    if (config.baseline == BaselineKind::VMean) {
        for (std::size_t r = 0; r < rows; ++r) {
            double s = 0.0;
            for (std::size_t c = 0; c < k; ++c) s += probs(r, c);
            baseline[r] = s / static_cast<double>(k);
        }
    } else {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += reward[r];
        const double c = config.beta1 * s / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r) baseline[r] = c;
    }
    out.reward = g.constant(reward);
    out.baseline = g.constant(baseline);

    Var objective = out.elbo;
    if (config.beta1 != 0.0) {
        // f(y) = 1 on unlabeled rows (score the sampled v); f(y) = y on
        // labeled rows (score the true class instead of the sample).
        Tensor selection = out.latent.v_sample_one_hot;
        Tensor advantage(rows, 1);
        for (std::size_t r = 0; r < rows; ++r) {
            advantage[r] = config.beta1 * reward[r] - baseline[r];
            if (!batch.labels[r]) continue;
            const std::size_t y = *batch.labels[r];
            if (y >= k) throw ValidationError("label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
            for (std::size_t c = 0; c < k; ++c) selection(r, c) = c == y ? 1.0 : 0.0;
            if (config.labeled_advantage == LabeledAdvantage::Magnitude) advantage[r] = std::abs(advantage[r]);
        }
        out.constraint = score_function_surrogate(out.latent.v, advantage, selection);
        objective = add(objective, out.constraint);
    }
    out.objective = add(objective, scale(out.entropy, config.beta2));
    out.total = scale(mean(out.objective), -1.0);
    return out;
}

LossBreakdown unlabeled_loss(const BoundParams& p, const Batch& batch, const BatchNoise& noise,
                             const ObjectiveConfig& config) {
    if (batch.labeled_count() != 0) throw UsageError("unlabeled_loss: batch contains labeled rows");
    if (!(config.beta2 >= 0.0)) throw ConfigError("beta2", "must be >= 0");
    LossBreakdown out = elbo_terms(p, batch.x, noise, config);
    out.entropy = categorical_entropy(out.latent.v);
    out.objective = add(out.elbo, scale(out.entropy, config.beta2));
    out.total = scale(mean(out.objective), -1.0);
    return out;
}

LossBreakdown variant_loss(Variant variant, const BoundParams& p, const Batch& batch, const BatchNoise& noise,
                           const ObjectiveConfig& config) {
    return variant == Variant::Sdvae1 ? sdvae1_loss(p, batch, noise, config) : sdvae2_loss(p, batch, noise, config);
}

std::vector<std::size_t> argmax_rows(const Tensor& t) {
    std::vector<std::size_t> out(t.rows(), 0);
    for (std::size_t r = 0; r < t.rows(); ++r) {
        double best = t(r, 0);
        for (std::size_t c = 1; c < t.cols(); ++c)
            if (t(r, c) > best) {
                best = t(r, c);
                out[r] = c;
            }
    }
    return out;
}

std::vector<std::size_t> predict(const ModelParams& params, const Tensor& x) {
    Graph g;
    BoundParams p = BoundParams::constants(g, params);
    return argmax_rows(encode(p, x).v.probs.value());
}

Reconstruction reconstruct(const ModelParams& params, const Tensor& x, LatentMask mask, VDecode v_decode) {
    const ModelConfig& cfg = params.config;
    Graph g;
    BoundParams p = BoundParams::constants(g, params);
    Encoded enc = encode(p, x);
    const std::size_t rows = x.rows();

    FlowState s = flow_init(enc.u, NoiseSample::zeros(rows, cfg.dim_u), cfg.flow_length);
    for (const auto& step : p.flow) s = flow_step(s, step);
    Var u = s.u;
    Var v = v_decode == VDecode::Sample ? g.constant(one_hot(argmax_rows(enc.v.probs.value()), cfg.classes))
                                        : enc.v.probs;
    if (mask == LatentMask::MaskU) u = g.constant(Tensor(rows, cfg.dim_u, 0.0));
    if (mask == LatentMask::MaskV) v = g.constant(Tensor(rows, cfg.classes, 0.0));

    Var logits = decode(p, u, v);
    Reconstruction out;
    out.loglik = recon_loglik(cfg, logits, x).value();
    out.pixel_means = cfg.likelihood == Likelihood::Bernoulli ? sigmoid(logits).value() : logits.value();
    return out;
}

LatentSummary infer_latents(const ModelParams& params, const Tensor& x) {
    Graph g;
    BoundParams p = BoundParams::constants(g, params);
    Encoded enc = encode(p, x);
    return {enc.v.probs.value(), enc.u.mu.value()};
}

}  // namespace sdvae
