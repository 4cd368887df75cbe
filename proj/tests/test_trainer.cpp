#include <algorithm>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>

#include "sdvae/errors.hpp"
#include "sdvae/trainer.hpp"
#include "test_support.hpp"

using namespace sdvae;
using sdvae::testing::bits_equal;

namespace {

SyntheticSpec small_spec() {
    SyntheticSpec s;
    s.train_count = 400;
    s.test_count = 100;
    return s;
}

TrainingConfig small_training(Variant variant, bool iaf) {
    TrainingConfig c;
    c.variant = variant;
    c.iaf = iaf;
    c.classes = 4;
    c.dim_u = 4;
    c.trunk_hidden = {32};
    c.decoder_hidden = 32;
    c.labeled_count = 40;
    c.batch_size = 50;
    c.epochs = 5;
    c.record_wallclock = false;
    return c;
}

const SyntheticData& data() {
    static const SyntheticData d = make_synthetic(small_spec());
    return d;
}

void run_adam(Tensor& w, double lr, std::size_t steps, const std::function<void(Tensor&)>& set_grad) {
    OptimizerState opt{{lr, 0.9, 0.999, 1e-8}, {}, {}, 0};
    std::vector<NamedTensor> params{{"w", &w}};
    for (std::size_t i = 0; i < steps; ++i) {
        set_grad(w);
        adam_step(opt, params);
    }
}

}  // namespace

TEST_CASE("adam: first step has magnitude lr regardless of the gradient scale") {
    Tensor w(1, 1, {0.0});
    run_adam(w, 1e-3, 1, [](Tensor& t) { t.grad()[0] = 0.5; });
    CHECK(w[0] == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("adam: zero gradients leave parameters unchanged") {
    Tensor w(2, 2, {1, 2, 3, 4});
    const Tensor before = w;
    run_adam(w, 1e-3, 10, [](Tensor& t) { t.zero_grad(); });
    CHECK(w.same_values(before));
}

TEST_CASE("adam: converges on a 1-D quadratic") {
    // lr 0.1: with lr 1e-3, 200 Adam steps can move w by at most ~0.2.
    Tensor w(1, 1, {0.0});
    run_adam(w, 0.1, 200, [](Tensor& t) { t.grad()[0] = 2.0 * (t[0] - 3.0); });
    CHECK(std::abs(w[0] - 3.0) < 0.5);
}

TEST_CASE("adam: a non-finite gradient aborts the step and names the parameter") {
    Tensor a(1, 1, {1.0}), b(1, 1, {2.0});
    OptimizerState opt{{1e-3, 0.9, 0.999, 1e-8}, {}, {}, 0};
    std::vector<NamedTensor> params{{"a", &a}, {"decoder.out.bias", &b}};
    a.grad()[0] = 1.0;
    b.grad()[0] = std::nan("");
    try {
        adam_step(opt, params);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("decoder.out.bias") != std::string::npos);
    }
    CHECK(a[0] == 1.0);
    CHECK(b[0] == 2.0);
    CHECK(opt.step == 0);
}

TEST_CASE("split: stratified, deterministic, labels of the unlabeled pool hidden") {
    const Dataset& d = data().train;
    const SemiSupervisedSplit s = split_semisupervised(d, 42, 5);
    CHECK(s.labeled.size() == 42);
    CHECK(s.unlabeled_indices.size() == d.size() - 42);
    CHECK(s.unlabeled_images.rows() == d.size() - 42);
    std::map<std::size_t, std::size_t> per_class;
    for (std::size_t y : s.labeled.labels) ++per_class[y];
    CHECK(per_class[0] == 11);
    CHECK(per_class[1] == 11);
    CHECK(per_class[2] == 10);
    CHECK(per_class[3] == 10);

    const SemiSupervisedSplit again = split_semisupervised(d, 42, 5);
    CHECK(again.labeled_indices == s.labeled_indices);
    CHECK(again.unlabeled_indices == s.unlabeled_indices);
    CHECK(split_semisupervised(d, 42, 6).labeled_indices != s.labeled_indices);

    for (std::size_t i = 0; i < s.unlabeled_indices.size(); ++i)
        CHECK(s.hidden_labels[i] == d.labels[s.unlabeled_indices[i]]);

    const SemiSupervisedSplit all = split_semisupervised(d, d.size(), 1);
    CHECK(all.unlabeled_indices.empty());

    CHECK_THROWS_AS(split_semisupervised(d, d.size() + 1, 1), ConfigError);
    CHECK_THROWS_AS(split_semisupervised(d, 3, 1), ConfigError);
}

TEST_CASE("train: zero epochs returns initialized parameters and no metrics") {
    TrainingConfig c = small_training(Variant::Sdvae2, true);
    c.epochs = 0;
    const TrainResult r = train(c, data().train);
    CHECK(r.metrics.empty());
    CHECK(r.params.all_finite());
}

TEST_CASE("train: identical inputs give bitwise-identical metrics and parameters") {
    TrainingConfig c = small_training(Variant::Sdvae2, true);
    c.epochs = 2;
    const TrainResult a = train(c, data().train, &data().test);
    const TrainResult b = train(c, data().train, &data().test);
    CHECK(a.params.same_values(b.params));
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (std::size_t i = 0; i < a.metrics.size(); ++i) CHECK(metrics_json_line(a.metrics[i]) == metrics_json_line(b.metrics[i]));

    c.seed = 2;
    CHECK_FALSE(train(c, data().train).params.same_values(a.params));
}

TEST_CASE("train: epoch-mean loss strictly decreases over the first five epochs for every variant") {
    for (Variant v : {Variant::Sdvae1, Variant::Sdvae2})
        for (bool iaf : {false, true}) {
            const TrainingConfig c = small_training(v, iaf);
            const TrainResult r = train(c, data().train);
            REQUIRE(r.metrics.size() == 5);
            for (std::size_t e = 1; e < 5; ++e) {
                INFO("variant " << (v == Variant::Sdvae1 ? "sdvae1" : "sdvae2") << " iaf " << iaf << " epoch " << e + 1);
                CHECK(r.metrics[e].loss < r.metrics[e - 1].loss);
            }
        }
}

TEST_CASE("train: smoothed ELBO is nondecreasing over 30 epochs, one late regression allowed") {
    TrainingConfig c = small_training(Variant::Sdvae2, true);
    c.epochs = 30;
    const TrainResult r = train(c, data().train);
    std::vector<double> smooth;
    for (std::size_t e = 4; e < r.metrics.size(); ++e) {
        double s = 0.0;
        for (std::size_t k = e - 4; k <= e; ++k) s += r.metrics[k].elbo;
        smooth.push_back(s / 5.0);
    }
    std::size_t regressions = 0;
    for (std::size_t i = 1; i < smooth.size(); ++i)
        if (smooth[i] < smooth[i - 1]) {
            ++regressions;
            CHECK(i >= smooth.size() / 2);
        }
    CHECK(regressions <= 1);
    CHECK(r.params.all_finite());
}

TEST_CASE("label-leakage canary: scrambling hidden labels changes nothing") {
    const TrainingConfig c = small_training(Variant::Sdvae2, true);
    const SemiSupervisedSplit split = split_semisupervised(data().train, c.labeled_count, c.seed);
    SemiSupervisedSplit scrambled = split;
    for (auto& y : scrambled.hidden_labels) y = (y + 1) % 4;
    std::reverse(scrambled.hidden_labels.begin(), scrambled.hidden_labels.end());
    TrainingConfig short_run = c;
    short_run.epochs = 2;
    const TrainResult a = train(short_run, split, &data().test);
    const TrainResult b = train(short_run, scrambled, &data().test);
    CHECK(a.params.same_values(b.params));
    for (std::size_t i = 0; i < a.metrics.size(); ++i) CHECK(metrics_json_line(a.metrics[i]) == metrics_json_line(b.metrics[i]));
}

TEST_CASE("train: 100 steps with a fresh flow stay finite") {
    TrainingConfig c = small_training(Variant::Sdvae2, true);
    c.batch_size = 40;
    c.epochs = 10;  // 400 rows / 40 = 10 steps per epoch
    const TrainResult r = train(c, data().train);
    CHECK(r.params.all_finite());
    for (const auto& m : r.metrics) CHECK(std::isfinite(m.loss));
}

TEST_CASE("train: class-count mismatch is a config error") {
    TrainingConfig c = small_training(Variant::Sdvae1, false);
    c.classes = 3;
    CHECK_THROWS_AS(train(c, data().train), ConfigError);
}

TEST_CASE("train: divergence surfaces as TrainingDiverged with the last good parameters") {
    TrainingConfig c = small_training(Variant::Sdvae1, false);
    c.likelihood = Likelihood::Gaussian;
    c.learning_rate = 1e6;
    c.epochs = 50;
    try {
        train(c, data().train);
        FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
        CHECK(e.last_good().params.all_finite());
        CHECK(std::string(e.kind()) == "numeric");
    }
}

TEST_CASE("evaluate: chance level for an untrained uniform model, zero for a consistent one, deterministic") {
    ModelConfig mc = small_training(Variant::Sdvae1, false).model_config(64);
    ModelParams p = ModelParams::init(mc, 3);
    for (double& w : p.v_head.weight.values()) w = 0.0;
    for (double& b : p.v_head.bias.values()) b = 0.0;
    const MetricsRecord m = evaluate(p, data().test, VDecode::Expected);
    CHECK(m.test_err == doctest::Approx(0.75));
    CHECK(m.re < 0.0);

    Dataset zeros = data().test;
    for (auto& y : zeros.labels) y = 0;
    CHECK(classification_error(p, zeros) == 0.0);

    const MetricsRecord again = evaluate(p, data().test, VDecode::Expected);
    CHECK(bits_equal(m.re, again.re));
    CHECK(bits_equal(m.test_err, again.test_err));
}

TEST_CASE("metrics lines have stable field names; NaN is null") {
    MetricsRecord m;
    m.epoch = 3;
    m.re = -1.5;
    const auto j = nlohmann::json::parse(metrics_json_line(m));
    for (const char* key : {"epoch", "re", "kl_u", "kl_v", "entropy", "train_err", "test_err", "seconds"})
        CHECK(j.contains(key));
    CHECK(j["epoch"] == 3);
    CHECK(j["test_err"].is_null());
    CHECK(metrics_json_line(m).find('\n') == std::string::npos);
}

TEST_CASE("training config validation and derived settings") {
    TrainingConfig c;
    CHECK(c.resolved_v_decode() == VDecode::Sample);
    c.variant = Variant::Sdvae1;
    CHECK(c.resolved_v_decode() == VDecode::Expected);
    c.v_decode = VDecode::Sample;
    CHECK(c.resolved_v_decode() == VDecode::Sample);
    c.iaf = false;
    CHECK(c.effective_flow_length() == 0);
    CHECK(c.model_config(64).flow_length == 0);
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
