#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sdvae/data.hpp"
#include "sdvae/errors.hpp"
#include "sdvae/model.hpp"

namespace sdvae {

// Every knob of a run. Defaults follow the tuned values: lambda 0.1,
// beta1 0.1, beta2 1, one IAF step, dim_u 50, K 10.
struct TrainingConfig {
    Variant variant = Variant::Sdvae2;
    bool iaf = true;
    double lambda = 0.1;
    double mu = 1.0;
    double beta1 = 0.1;
    double beta2 = 1.0;
    std::size_t flow_length = 1;
    std::size_t dim_u = 50;
    std::size_t classes = 10;
    std::vector<std::size_t> trunk_hidden{256, 128};
    std::size_t decoder_hidden = 128;
    double dropout = 0.1;
    Likelihood likelihood = Likelihood::Bernoulli;
    std::optional<VDecode> v_decode;  // unset: Expected for sdvae1, Sample for sdvae2
    BaselineKind baseline = BaselineKind::VMean;
    LabeledAdvantage labeled_advantage = LabeledAdvantage::Magnitude;

    std::size_t labeled_count = 100;
    std::size_t batch_size = 100;
    std::size_t epochs = 200;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double clip_grad_norm = 0.0;  // 0 disables clipping
    std::uint64_t seed = 1;
    bool record_wallclock = true;

    // Data selection, consumed by the CLI.
    std::string dataset = "synthetic";
    double binarize_threshold = 0.5;  // 0 keeps gray levels
    SyntheticSpec synthetic{};

    std::size_t effective_flow_length() const { return iaf ? flow_length : 0; }
    VDecode resolved_v_decode() const;
    ModelConfig model_config(std::size_t dim_x) const;
    ObjectiveConfig objective_config() const;
    void validate() const;
};

struct MetricsRecord {
    std::size_t epoch = 0;
    double re = 0.0;
    double kl_u = 0.0;
    double kl_v = 0.0;
    double entropy = 0.0;
    double elbo = 0.0;
    double loss = 0.0;
    double train_err = std::numeric_limits<double>::quiet_NaN();
    double test_err = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
};

// One JSON object per line; NaN fields are written as null.
std::string metrics_json_line(const MetricsRecord& m);

// Unlabeled rows keep no labels. The true labels of the unlabeled pool sit in
// `hidden_labels` for offline scoring only; training never reads them.
struct SemiSupervisedSplit {
    Dataset labeled;
    Tensor unlabeled_images;
    std::vector<std::size_t> labeled_indices;
    std::vector<std::size_t> unlabeled_indices;
    std::vector<std::size_t> hidden_labels;
    std::size_t classes = 0;
};

// Stratified: class c receives labeled_count / K rows, plus one for the
// first labeled_count % K classes. Deterministic in `seed`.
SemiSupervisedSplit split_semisupervised(const Dataset& d, std::size_t labeled_count, std::uint64_t seed);

struct AdamSettings {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    AdamSettings settings;
    std::vector<std::vector<double>> first_moment;
    std::vector<std::vector<double>> second_moment;
    std::uint64_t step = 0;
};

// Bias-corrected Adam update using each tensor's grad slot. Throws
// NumericError naming the parameter (and changes nothing) on a non-finite grad.
void adam_step(OptimizerState& state, std::span<const NamedTensor> params);

struct TrainResult {
    ModelParams params;
    std::vector<MetricsRecord> metrics;
};

// Raised when the loss or a gradient goes non-finite. Carries the parameters
// as of the last completed epoch.
class TrainingDiverged : public NumericError {
public:
    TrainingDiverged(const std::string& message, TrainResult last_good)
        : NumericError(message), last_good_(std::move(last_good)) {}
    const TrainResult& last_good() const noexcept { return last_good_; }

private:
    TrainResult last_good_;
};

using MetricsSink = std::function<void(const MetricsRecord&)>;

TrainResult train(const TrainingConfig& config, const SemiSupervisedSplit& split, const Dataset* test = nullptr,
                  const MetricsSink& sink = {});
// Splits `train_data` with config.labeled_count and config.seed first.
TrainResult train(const TrainingConfig& config, const Dataset& train_data, const Dataset* test = nullptr,
                  const MetricsSink& sink = {});

// Classification error and mean deterministic reconstruction log-likelihood.
MetricsRecord evaluate(const ModelParams& params, const Dataset& data, VDecode v_decode);
double classification_error(const ModelParams& params, const Dataset& data);

}  // namespace sdvae
