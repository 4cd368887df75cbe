#include <atomic>

#include "sdvae/errors.hpp"
#include "sdvae/gradcheck.hpp"
#include "sdvae/gradcheck_suite.hpp"
#include "test_support.hpp"

using namespace sdvae;

TEST_CASE("quadratic is exact under central differences") {
    Tensor x(1, 1, {3.0});
    const GradCheckReport r =
        finite_difference_check([](Graph&, std::span<const Var> in) { return sum(mul(in[0], in[0])); }, x, 1e-6);
    CHECK(r.max_rel_error < 1e-8);
    CHECK(r.coordinates == 1);
}

TEST_CASE("relu at its kink is skipped, not failed") {
    Tensor x(1, 2, {0.0, 1.0});
    const GradCheckReport r =
        finite_difference_check([](Graph&, std::span<const Var> in) { return sum(relu(in[0])); }, x, 1e-6);
    CHECK(r.skipped_kinks == 1);
    CHECK(r.coordinates == 1);
    CHECK(r.max_rel_error < 1e-8);
}

TEST_CASE("step size outside (0, 1e-3] is rejected") {
    Tensor x(1, 1, {1.0});
    auto f = [](Graph&, std::span<const Var> in) { return sum(in[0]); };
    CHECK_THROWS_AS(finite_difference_check(f, x, 0.0), UsageError);
    CHECK_THROWS_AS(finite_difference_check(f, x, 1e-2), UsageError);
}

TEST_CASE("a non-deterministic objective is reported as an oracle error") {
    Tensor x(1, 1, {1.0});
    std::atomic<int> calls{0};
    auto f = [&](Graph& g, std::span<const Var> in) {
        return add(sum(in[0]), g.constant(Tensor::scalar(static_cast<double>(calls++))));
    };
    CHECK_THROWS_AS(finite_difference_check(f, x, 1e-6), OracleError);
}

TEST_CASE("a wrong gradient is detected") {
    Tensor x(1, 1, {2.0});
    // Value x^2 but gradient of x (detach removes one factor).
    auto f = [](Graph&, std::span<const Var> in) { return sum(mul(in[0], detach(in[0]))); };
    const GradCheckReport r = finite_difference_check(f, x, 1e-6);
    CHECK(r.max_rel_error > 0.1);
}

TEST_CASE("full suite passes under the acceptance tolerance") {
    const GradCheckSuiteResult r = run_gradcheck_suite(7, 10);
    CHECK(r.max_rel_error < 1e-5);
    bool saw_sdvae2_flow = false;
    for (const auto& e : r.entries) {
        INFO(e.name);
        CHECK(e.report.coordinates > 0);
        if (e.name.rfind("sdvae2", 0) == 0 && e.name.find("+iaf") != std::string::npos) saw_sdvae2_flow = true;
    }
    CHECK(saw_sdvae2_flow);
}
