#include "sdvae/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>

#include "sdvae/errors.hpp"

namespace sdvae {

VDecode TrainingConfig::resolved_v_decode() const {
    if (v_decode) return *v_decode;
    return variant == Variant::Sdvae1 ? VDecode::Expected : VDecode::Sample;
}

ModelConfig TrainingConfig::model_config(std::size_t dim_x) const {
    ModelConfig m;
    m.dim_x = dim_x;
    m.dim_u = dim_u;
    m.classes = classes;
    m.trunk_hidden = trunk_hidden;
    m.decoder_hidden = decoder_hidden;
    m.flow_length = effective_flow_length();
    m.dropout = dropout;
    m.likelihood = likelihood;
    return m;
}

ObjectiveConfig TrainingConfig::objective_config() const {
    ObjectiveConfig o;
    o.lambda = lambda;
    o.mu = mu;
    o.beta1 = beta1;
    o.beta2 = beta2;
    o.v_decode = resolved_v_decode();
    o.baseline = baseline;
    o.labeled_advantage = labeled_advantage;
    return o;
}

void TrainingConfig::validate() const {
    objective_config().validate();
    model_config(1).validate();
    if (batch_size == 0) throw ConfigError("batch_size", "must be positive");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate", "must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1", "must lie in [0,1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2", "must lie in [0,1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam_epsilon", "must be positive");
    if (!(clip_grad_norm >= 0.0)) throw ConfigError("clip_grad_norm", "must be >= 0");
    if (!(binarize_threshold >= 0.0 && binarize_threshold < 1.0))
        throw ConfigError("binarize", "must lie in [0,1), 0 disables");
    if (iaf && flow_length == 0) throw ConfigError("flow_length", "must be >= 1 when iaf is on");
}

std::string metrics_json_line(const MetricsRecord& m) {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::ordered_json j;
    j["epoch"] = m.epoch;
    j["re"] = num(m.re);
    j["kl_u"] = num(m.kl_u);
    j["kl_v"] = num(m.kl_v);
    j["entropy"] = num(m.entropy);
    j["elbo"] = num(m.elbo);
    j["loss"] = num(m.loss);
    j["train_err"] = num(m.train_err);
    j["test_err"] = num(m.test_err);
    j["seconds"] = num(m.seconds);
    return j.dump();
}

SemiSupervisedSplit split_semisupervised(const Dataset& d, std::size_t labeled_count, std::uint64_t seed) {
    d.validate();
    const std::size_t k = d.classes;
    if (labeled_count > d.size())
        throw ConfigError("labeled", std::to_string(labeled_count) + " exceeds dataset size " + std::to_string(d.size()));
    if (labeled_count < k)
        throw ConfigError("labeled", "need at least one labeled example per class (" + std::to_string(k) + ")");

    std::vector<std::vector<std::size_t>> by_class(k);
    for (std::size_t i = 0; i < d.size(); ++i) by_class[d.labels[i]].push_back(i);

    std::vector<char> chosen(d.size(), 0);
    if (labeled_count == d.size()) {
        std::fill(chosen.begin(), chosen.end(), 1);
    } else {
        Rng rng(seed);
        for (std::size_t c = 0; c < k; ++c) {
            const std::size_t quota = labeled_count / k + (c < labeled_count % k ? 1 : 0);
            auto& pool = by_class[c];
            if (pool.size() < quota)
                throw ConfigError("labeled", "class " + std::to_string(c) + " has only " + std::to_string(pool.size()) +
                                                 " examples, quota " + std::to_string(quota));
            std::shuffle(pool.begin(), pool.end(), rng);
            for (std::size_t i = 0; i < quota; ++i) chosen[pool[i]] = 1;
        }
    }

    SemiSupervisedSplit s;
    s.classes = k;
    for (std::size_t i = 0; i < d.size(); ++i) (chosen[i] ? s.labeled_indices : s.unlabeled_indices).push_back(i);
    s.labeled = d.subset(s.labeled_indices);
    if (!s.unlabeled_indices.empty()) s.unlabeled_images = d.rows(s.unlabeled_indices);
    for (std::size_t i : s.unlabeled_indices) s.hidden_labels.push_back(d.labels[i]);
    return s;
}

void adam_step(OptimizerState& state, std::span<const NamedTensor> params) {
    for (const auto& [name, t] : params)
        for (double g : t->grad())
            if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter '" + name + "'");

    if (state.first_moment.empty()) {
        for (const auto& [name, t] : params) {
            state.first_moment.emplace_back(t->size(), 0.0);
            state.second_moment.emplace_back(t->size(), 0.0);
        }
    }
    if (state.first_moment.size() != params.size()) throw UsageError("adam_step: parameter list changed between steps");

    const AdamSettings& s = state.settings;
    ++state.step;
    const double step = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(s.beta1, step);
    const double correction2 = 1.0 - std::pow(s.beta2, step);
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = *params[p].second;
        auto& m = state.first_moment[p];
        auto& v = state.second_moment[p];
        if (m.size() != t.size()) throw UsageError("adam_step: moment shape mismatch for '" + params[p].first + "'");
        auto w = t.values();
        auto g = t.grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
            v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            w[i] -= s.learning_rate * m_hat / (std::sqrt(v_hat) + s.epsilon);
        }
    }
}

double classification_error(const ModelParams& params, const Dataset& data) {
    if (data.size() == 0) return std::numeric_limits<double>::quiet_NaN();
    const auto predicted = predict(params, data.images);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) wrong += predicted[i] != data.labels[i];
    return static_cast<double>(wrong) / static_cast<double>(data.size());
}

MetricsRecord evaluate(const ModelParams& params, const Dataset& data, VDecode v_decode) {
    MetricsRecord m;
    m.test_err = classification_error(params, data);
    const Reconstruction rec = reconstruct(params, data.images, LatentMask::None, v_decode);
    double s = 0.0;
    for (double v : rec.loglik.values()) s += v;
    m.re = s / static_cast<double>(data.size());
    return m;
}

namespace {

// Endless shuffled stream over [0, n), reshuffled at each wrap.
class IndexStream {
public:
    IndexStream(std::size_t n, Rng& rng) : order_(n), rng_(rng) {
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        std::shuffle(order_.begin(), order_.end(), rng_);
    }
    std::size_t next() {
        if (pos_ == order_.size()) {
            std::shuffle(order_.begin(), order_.end(), rng_);
            pos_ = 0;
        }
        return order_[pos_++];
    }

private:
    std::vector<std::size_t> order_;
    Rng& rng_;
    std::size_t pos_ = 0;
};

Tensor gather_rows(const Tensor& src, std::span<const std::size_t> idx) {
    std::vector<double> v;
    v.reserve(idx.size() * src.cols());
    for (std::size_t i : idx) {
        auto row = src.values().subspan(i * src.cols(), src.cols());
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(idx.size(), src.cols(), std::move(v));
}

double column_total(Var v) {
    double s = 0.0;
    for (double x : v.value().values()) s += x;
    return s;
}

void clip_gradients(std::span<const NamedTensor> params, double max_norm) {
    double sq = 0.0;
    for (const auto& [name, t] : params)
        for (double g : t->grad()) sq += g * g;
    const double norm = std::sqrt(sq);
    if (!(norm > max_norm)) return;
    const double factor = max_norm / norm;
    for (const auto& [name, t] : params)
        for (double& g : t->grad()) g *= factor;
}

}  // namespace

TrainResult train(const TrainingConfig& config, const SemiSupervisedSplit& split, const Dataset* test,
                  const MetricsSink& sink) {
    config.validate();
    const std::size_t n_labeled = split.labeled.size();
    const std::size_t n_unlabeled = split.unlabeled_indices.size();
    const std::size_t total = n_labeled + n_unlabeled;
    if (total == 0) throw ConfigError("dataset", "training set is empty");
    if (split.classes != config.classes)
        throw ConfigError("classes", "config has K=" + std::to_string(config.classes) + " but the dataset has " +
                                         std::to_string(split.classes) + " classes");
    const std::size_t dim_x = n_labeled > 0 ? split.labeled.dim_x() : split.unlabeled_images.cols();
    if (test != nullptr && test->dim_x() != dim_x) throw ConfigError("dataset", "test set width differs from train set");

    const ModelConfig model_cfg = config.model_config(dim_x);
    const ObjectiveConfig objective = config.objective_config();

    std::seed_seq params_seq{config.seed, std::uint64_t{0x5eed}};
    std::uint64_t params_seed = 0;
    {
        std::uint32_t words[2];
        params_seq.generate(words, words + 2);
        params_seed = (std::uint64_t{words[0]} << 32) | words[1];
    }
    std::seed_seq stream_seq{config.seed, std::uint64_t{0xba7c4}};
    Rng rng(stream_seq);

    TrainResult result{ModelParams::init(model_cfg, params_seed), {}};
    ModelParams& params = result.params;
    auto named = params.named_tensors();
    OptimizerState opt{{config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon}, {}, {}, 0};

    const std::size_t batch = std::min(config.batch_size, total);
    const std::size_t batches_per_epoch = (total + batch - 1) / batch;
    std::size_t labeled_per_batch = 0;
    if (n_unlabeled == 0) {
        labeled_per_batch = batch;
    } else if (n_labeled > 0) {
        const double share = static_cast<double>(batch) * static_cast<double>(n_labeled) / static_cast<double>(total);
        labeled_per_batch = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(share)), 1, batch - 1);
    }
    const std::size_t unlabeled_per_batch = batch - labeled_per_batch;

    IndexStream labeled_stream(n_labeled, rng);
    IndexStream unlabeled_stream(n_unlabeled, rng);
    TrainResult last_good{params, {}};

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        MetricsRecord m;
        m.epoch = epoch;
        double rows_seen = 0.0;
        double loss_sum = 0.0;
        try {
            for (std::size_t b = 0; b < batches_per_epoch; ++b) {
                std::vector<std::size_t> li(labeled_per_batch), ui(unlabeled_per_batch);
                for (auto& i : li) i = labeled_stream.next();
                for (auto& i : ui) i = unlabeled_stream.next();
                std::vector<std::size_t> labels;
                for (std::size_t i : li) labels.push_back(split.labeled.labels[i]);
                Batch mb = Batch::concat(li.empty() ? Batch{} : Batch::labeled(split.labeled.rows(li), labels),
                                         ui.empty() ? Batch{} : Batch::unlabeled(gather_rows(split.unlabeled_images, ui)));
                const BatchNoise noise = BatchNoise::draw(mb.rows(), model_cfg, rng, true);

                Graph graph;
                BoundParams bound = BoundParams::bind(graph, params);
                params.zero_grad();
                LossBreakdown loss = variant_loss(config.variant, bound, mb, noise, objective);
                graph.backward(loss.total);
                if (config.clip_grad_norm > 0.0) clip_gradients(named, config.clip_grad_norm);
                adam_step(opt, named);

                m.re += column_total(loss.re);
                m.kl_u += column_total(loss.kl_u);
                m.kl_v += column_total(loss.kl_v);
                m.elbo += column_total(loss.elbo);
                m.entropy += loss.entropy.valid() ? column_total(loss.entropy)
                                                  : column_total(categorical_entropy(loss.latent.v));
                loss_sum += loss.total.item();
                rows_seen += static_cast<double>(mb.rows());
            }
            if (!params.all_finite()) throw NumericError("parameters became non-finite");
        } catch (const NumericError& e) {
            throw TrainingDiverged("training diverged in epoch " + std::to_string(epoch) + ": " + e.what(), last_good);
        }
        m.re /= rows_seen;
        m.kl_u /= rows_seen;
        m.kl_v /= rows_seen;
        m.elbo /= rows_seen;
        m.entropy /= rows_seen;
        m.loss = loss_sum / static_cast<double>(batches_per_epoch);
        if (n_labeled > 0) m.train_err = classification_error(params, split.labeled);
        if (test != nullptr) m.test_err = classification_error(params, *test);
        if (config.record_wallclock)
            m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

        result.metrics.push_back(m);
        if (sink) sink(m);
        last_good.params = params;
        last_good.metrics = result.metrics;
    }
    return result;
}

TrainResult train(const TrainingConfig& config, const Dataset& train_data, const Dataset* test,
                  const MetricsSink& sink) {
    return train(config, split_semisupervised(train_data, config.labeled_count, config.seed), test, sink);
}

}  // namespace sdvae
