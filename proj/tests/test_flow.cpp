#include <cmath>
#include <numbers>

#include "sdvae/errors.hpp"
#include "sdvae/flow.hpp"
#include "test_support.hpp"

using namespace sdvae;
using sdvae::testing::random_tensor;

namespace {

FlowStep random_step(std::size_t dim, std::mt19937_64& rng) {
    const Tensor mask = autoregressive_mask(dim);
    FlowStep s{random_tensor(dim, dim, rng), random_tensor(1, dim, rng), random_tensor(dim, dim, rng),
               random_tensor(1, dim, rng)};
    for (std::size_t i = 0; i < dim * dim; ++i) {
        s.gate_weight[i] *= mask[i];
        s.shift_weight[i] *= mask[i];
    }
    return s;
}

FlowStepVars const_step(Graph& g, const FlowStep& s) {
    return {g.constant(s.gate_weight), g.constant(s.gate_bias), g.constant(s.shift_weight), g.constant(s.shift_bias)};
}

// u_0 -> (u_T, correction) through the chain, with sigma = 1 so u_0 = mu.
std::pair<Tensor, double> run_chain(const Tensor& u0, const std::vector<FlowStep>& steps) {
    Graph g;
    GaussianPosterior post{g.constant(u0), g.constant(Tensor(1, u0.cols(), 1.0))};
    FlowState s = flow_init(post, NoiseSample::zeros(1, u0.cols()), steps.size());
    for (const auto& step : steps) s = flow_step(s, const_step(g, step));
    return {s.u.value(), s.log_q_correction.item()};
}

double log_abs_det(std::vector<std::vector<double>> a) {
    const std::size_t n = a.size();
    double log_det = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t pivot = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a[r][c]) > std::abs(a[pivot][c])) pivot = r;
        std::swap(a[c], a[pivot]);
        log_det += std::log(std::abs(a[c][c]));
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a[r][c] / a[c][c];
            for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
        }
    }
    return log_det;
}

}  // namespace

TEST_CASE("mask is strictly lower triangular in the dependency sense") {
    const Tensor m = autoregressive_mask(4);
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < 4; ++i) CHECK(m(j, i) == (j < i ? 1.0 : 0.0));
}

TEST_CASE("flow_init: u = mu + sigma * eps with zero correction") {
    Graph g;
    GaussianPosterior post{g.constant(Tensor(1, 2, 0.0)), g.constant(Tensor(1, 2, 1.0))};
    NoiseSample n{Tensor(1, 2, {0.4, -0.2}), 0};
    FlowState s = flow_init(post, n, 1);
    CHECK(s.u.value().same_values(n.eps));
    CHECK(s.log_q_correction.item() == 0.0);
    CHECK(s.t == 0);

    GaussianPosterior one{g.constant(Tensor(1, 1, 0.7)), g.constant(Tensor(1, 1, 1.0))};
    CHECK(flow_init(one, NoiseSample::zeros(1, 1), 0).base_log_density.item() == doctest::Approx(-0.918939).epsilon(1e-6));
}

TEST_CASE("explicit step arithmetic") {
    Graph g;
    GaussianPosterior post{g.constant(Tensor(1, 2, {1.0, 2.0})), g.constant(Tensor(1, 2, 1.0))};
    FlowState s = flow_init(post, NoiseSample::zeros(1, 2), 1);
    FlowState next = flow_apply(s, g.constant(Tensor(1, 2, 0.5)), g.constant(Tensor(1, 2, {1.0, -1.0})));
    CHECK(next.u.value()(0, 0) == 1.5);
    CHECK(next.u.value()(0, 1) == 0.0);
    CHECK(next.log_q_correction.item() == doctest::Approx(-2.0 * std::log(0.5)));
    CHECK(next.t == 1);

    FlowState ident = flow_apply(s, g.constant(Tensor(1, 2, 1.0)), g.constant(Tensor(1, 2, 0.0)));
    CHECK(ident.u.value().same_values(s.u.value()));
    CHECK(ident.log_q_correction.item() == 0.0);
}

TEST_CASE("stepping past the configured length or reading KL early is a usage error") {
    Graph g;
    GaussianPosterior post{g.constant(Tensor(1, 2, 0.0)), g.constant(Tensor(1, 2, 1.0))};
    FlowState s = flow_init(post, NoiseSample::zeros(1, 2), 1);
    CHECK_THROWS_AS(flow_kl_u(s), UsageError);
    s = flow_apply(s, g.constant(Tensor(1, 2, 1.0)), g.constant(Tensor(1, 2, 0.0)));
    CHECK_THROWS_AS(flow_apply(s, g.constant(Tensor(1, 2, 1.0)), g.constant(Tensor(1, 2, 0.0))), UsageError);
}

TEST_CASE("sum of log delta equals the numeric Jacobian log-determinant") {
    std::mt19937_64 rng(17);
    const double h = 1e-6;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t dim = 1 + trial % 4;
        const std::size_t length = 1 + trial % 3;
        std::vector<FlowStep> steps;
        for (std::size_t t = 0; t < length; ++t) steps.push_back(random_step(dim, rng));
        const Tensor u0 = random_tensor(1, dim, rng, -2, 2);
        const double correction = run_chain(u0, steps).second;

        std::vector<std::vector<double>> jac(dim, std::vector<double>(dim));
        for (std::size_t j = 0; j < dim; ++j) {
            Tensor plus = u0, minus = u0;
            plus[j] += h;
            minus[j] -= h;
            const Tensor up = run_chain(plus, steps).first;
            const Tensor dn = run_chain(minus, steps).first;
            for (std::size_t i = 0; i < dim; ++i) jac[i][j] = (up[i] - dn[i]) / (2 * h);
        }
        const double numeric = log_abs_det(jac);
        const double analytic = -correction;
        INFO("dim " << dim << " T " << length);
        CHECK(std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)) < 1e-4);
    }
}

TEST_CASE("autoregressive probe: coordinate j never influences outputs i <= j") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t dim = 2 + trial % 3;
        const FlowStep step = random_step(dim, rng);
        const Tensor u = random_tensor(1, dim, rng);
        auto outputs = [&](const Tensor& input) {
            Graph g;
            FlowStepOutputs o = flow_step_outputs(g.constant(input), const_step(g, step));
            return std::pair{o.delta.value(), o.shift.value()};
        };
        const auto base = outputs(u);
        for (std::size_t j = 0; j < dim; ++j) {
            Tensor moved = u;
            moved[j] += 0.5;
            const auto out = outputs(moved);
            for (std::size_t i = 0; i <= j; ++i) {
                CHECK(out.first[i] == base.first[i]);
                CHECK(out.second[i] == base.second[i]);
            }
            if (j + 1 < dim) {
                bool changed = false;
                for (std::size_t i = j + 1; i < dim; ++i) changed |= out.second[i] != base.second[i];
                CHECK(changed);
            }
        }
    }
}

TEST_CASE("delta lies in (0, 1) and starts near sigmoid(1)") {
    Rng rng(2);
    const FlowStep step = FlowStep::init(5, rng);
    Graph g;
    FlowStepOutputs o = flow_step_outputs(g.constant(Tensor(3, 5, 0.3)), const_step(g, step));
    for (double d : o.delta.value().values()) {
        CHECK(d > 0.0);
        CHECK(d < 1.0);
        CHECK(d == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(0.05));
    }
    for (std::size_t i = 0; i < o.delta.value().size(); ++i)
        CHECK(o.log_delta.value()[i] == doctest::Approx(std::log(o.delta.value()[i])).epsilon(1e-12));
}

TEST_CASE("identity flow: KL estimate matches the no-flow case; zero at the prior") {
    std::mt19937_64 rng(31);
    Graph g;
    GaussianPosterior post{g.constant(random_tensor(2, 3, rng)), g.constant(random_tensor(2, 3, rng, 0.5, 1.5))};
    const NoiseSample n = NoiseSample::draw(2, 3, 5);
    FlowState plain = flow_init(post, n, 0);
    FlowState ident = flow_init(post, n, 2);
    for (int t = 0; t < 2; ++t) ident = flow_apply(ident, g.constant(Tensor(2, 3, 1.0)), g.constant(Tensor(2, 3, 0.0)));
    const Tensor a = flow_kl_u(plain).value();
    const Tensor b = flow_kl_u(ident).value();
    for (std::size_t r = 0; r < 2; ++r) CHECK(a[r] == b[r]);

    GaussianPosterior prior{g.constant(Tensor(1, 3, 0.0)), g.constant(Tensor(1, 3, 1.0))};
    FlowState at_prior = flow_init(prior, NoiseSample{Tensor(1, 3, {0.3, -1.0, 2.0}), 0}, 1);
    at_prior = flow_apply(at_prior, g.constant(Tensor(1, 3, 1.0)), g.constant(Tensor(1, 3, 0.0)));
    CHECK(flow_kl_u(at_prior).item() == 0.0);
}

TEST_CASE("T = 0: mean of the single-sample KL estimate matches the closed form") {
    std::mt19937_64 rng(41);
    Graph g;
    GaussianPosterior post{g.constant(random_tensor(1, 2, rng)), g.constant(random_tensor(1, 2, rng, 0.5, 1.5))};
    const double closed = gaussian_kl_standard(post).item();
    const std::size_t draws = 100000;
    const NoiseSample n = NoiseSample::draw(draws, 2, 77);
    // Broadcast the single posterior row over all draws.
    Tensor mu(draws, 2), sigma(draws, 2);
    for (std::size_t r = 0; r < draws; ++r)
        for (std::size_t c = 0; c < 2; ++c) {
            mu(r, c) = post.mu.value()[c];
            sigma(r, c) = post.sigma.value()[c];
        }
    Graph big;
    GaussianPosterior rep{big.constant(mu), big.constant(sigma)};
    const Tensor est = flow_kl_u(flow_init(rep, n, 0)).value();
    double s = 0.0, s2 = 0.0;
    for (double v : est.values()) {
        s += v;
        s2 += v * v;
    }
    const double mean = s / draws;
    const double se = std::sqrt((s2 / draws - mean * mean) / draws);
    CHECK(std::abs(mean - closed) <= 3.0 * se);
}

TEST_CASE("expected flow KL is nonnegative within MC error") {
    std::mt19937_64 rng(43);
    const std::size_t draws = 20000;
    for (int trial = 0; trial < 3; ++trial) {
        const std::size_t dim = 3;
        std::vector<FlowStep> steps{random_step(dim, rng)};
        Tensor mu_row = random_tensor(1, dim, rng), sigma_row = random_tensor(1, dim, rng, 0.5, 1.5);
        Tensor mu(draws, dim), sigma(draws, dim);
        for (std::size_t r = 0; r < draws; ++r)
            for (std::size_t c = 0; c < dim; ++c) {
                mu(r, c) = mu_row[c];
                sigma(r, c) = sigma_row[c];
            }
        Graph g;
        FlowState s = flow_init({g.constant(mu), g.constant(sigma)}, NoiseSample::draw(draws, dim, 100 + trial), 1);
        s = flow_step(s, const_step(g, steps[0]));
        const Tensor est = flow_kl_u(s).value();
        double m = 0.0, m2 = 0.0;
        for (double v : est.values()) {
            m += v;
            m2 += v * v;
        }
        m /= draws;
        const double se = std::sqrt((m2 / draws - m * m) / draws);
        CHECK(m >= -3.0 * se);
    }
}
