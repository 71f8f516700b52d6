#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dppx/adamr.hpp"
#include "dppx/errors.hpp"
#include "dppx/numkit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

using namespace dppx;

namespace {

// one tensor wrapper
void step1(std::vector<double> & theta, const std::vector<double> & g, const std::vector<double> & anchor,
           AdamRState & st, const AdamRConfig & cfg) {
    const std::span<double> p(theta);
    const std::span<const double> gs(g);
    const std::span<const double> as(anchor);
    adamr_step(std::span<const std::span<double>>(&p, 1), std::span<const std::span<const double>>(&gs, 1),
               anchor.empty() ? std::span<const std::span<const double>>() : std::span<const std::span<const double>>(&as, 1),
               st, cfg);
}

AdamRState state_for(std::size_t n) {
    const std::size_t sizes[1] = {n};
    return AdamRState(sizes);
}

std::vector<double> randn(std::size_t n, std::uint64_t seed, const char * key) {
    RngStream r(seed, key);
    std::vector<double> v(n);
    for (double & x : v) {
        x = r.next_normal();
    }
    return v;
}

}  // namespace

TEST_CASE("scalar trace at t = 1") {
    // g = 0.1, theta - anchor = 1
    const double g = 0.1, b1 = 0.9, b2 = 0.999, lr = 0.1, lam = 0.01, eps = 1e-8;
    const double m = (1 - b1) * g;
    const double v = (1 - b2) * g * g;
    const double mh = m / (1 - b1);
    const double vh = v / (1 - b2);
    const double adam = lr * mh / (std::sqrt(vh) + eps);
    const double decay = lr * lam / (std::sqrt(vh) + eps);

    AdamRConfig cfg;
    cfg.lr = lr;
    cfg.lambda = lam;
    cfg.reg = Regularizer::l2;
    for (Regularizer r : {Regularizer::l2, Regularizer::l1, Regularizer::none}) {
        cfg.reg = r;
        std::vector<double> theta{2.5};
        AdamRState st = state_for(1);
        step1(theta, {g}, {1.5}, st, cfg);
        const double expect = 2.5 - adam - (r == Regularizer::none ? 0.0 : decay * 1.0);
        CHECK(std::abs(theta[0] - expect) < 1e-7);
        CHECK(st.t == 1);
    }
}

TEST_CASE("lambda = 0 is plain Adam") {
    const std::size_t n = 17;
    AdamRConfig cfg;
    cfg.lr = 0.01;
    cfg.lambda = 0.0;
    cfg.reg = Regularizer::l2;
    std::vector<double> theta = randn(n, 1, "theta");
    std::vector<double> ref = theta;
    const std::vector<double> anchor = randn(n, 1, "anchor");
    std::vector<double> m(n, 0.0), v(n, 0.0);
    AdamRState st = state_for(n);
    for (int t = 1; t <= 25; ++t) {
        const auto g = randn(n, static_cast<std::uint64_t>(t), "g");
        step1(theta, g, anchor, st, cfg);
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(cfg.beta1, t));
            const double vh = v[i] / (1 - std::pow(cfg.beta2, t));
            ref[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        CHECK(std::abs(theta[i] - ref[i]) < 1e-7);
    }
}

TEST_CASE("anchor is a fixed point of the decay term") {
    for (Regularizer r : {Regularizer::l2, Regularizer::l1}) {
        AdamRConfig cfg;
        cfg.lr = 0.05;
        cfg.lambda = 3.0;
        cfg.reg = r;
        std::vector<double> theta{0.25, -1.0, 4.0};
        const std::vector<double> anchor = theta;
        AdamRState st = state_for(3);
        step1(theta, {0.0, 0.0, 0.0}, anchor, st, cfg);
        CHECK(theta == anchor);
    }
}

TEST_CASE("l2 contracts toward the anchor") {
    AdamRConfig cfg;
    cfg.lr = 1e-9;  // lr * lambda / eps = 0.5
    cfg.lambda = 5.0;
    cfg.reg = Regularizer::l2;
    std::vector<double> theta = randn(8, 2, "t");
    const std::vector<double> anchor = randn(8, 2, "a");
    AdamRState st = state_for(8);
    auto dist = [&] {
        double s = 0.0;
        for (std::size_t i = 0; i < 8; ++i) {
            s += (theta[i] - anchor[i]) * (theta[i] - anchor[i]);
        }
        return std::sqrt(s);
    };
    double prev = dist();
    for (int t = 0; t < 30; ++t) {
        step1(theta, std::vector<double>(8, 0.0), anchor, st, cfg);
        const double d = dist();
        CHECK(d < prev);
        prev = d;
    }
}

TEST_CASE("l1 moves by a fixed step and does not overshoot") {
    AdamRConfig cfg;
    cfg.lr = 1e-9;
    cfg.lambda = 3.0;  // step 0.3 per iteration with v = 0
    cfg.reg = Regularizer::l1;
    std::vector<double> theta{1.0, -0.5, 0.1};
    const std::vector<double> anchor{0.0, 0.0, 0.0};
    const double stepsz = cfg.lr * cfg.lambda / cfg.eps;
    AdamRState st = state_for(3);
    for (int t = 0; t < 6; ++t) {
        const std::vector<double> before = theta;
        step1(theta, {0.0, 0.0, 0.0}, anchor, st, cfg);
        for (std::size_t i = 0; i < 3; ++i) {
            const double moved = std::abs(theta[i] - before[i]);
            if (std::abs(before[i]) >= stepsz) {
                CHECK(moved == doctest::Approx(stepsz));
            } else {
                CHECK(theta[i] == 0.0);
            }
            CHECK(std::abs(theta[i]) <= std::abs(before[i]));
        }
    }
    for (double x : theta) {
        CHECK(x == 0.0);
    }

    // without the clamp a coordinate may cross, but by less than one step
    cfg.l1_clamp = false;
    std::vector<double> th2{0.1};
    AdamRState s2 = state_for(1);
    step1(th2, {0.0}, {0.0}, s2, cfg);
    CHECK(th2[0] < 0.0);
    CHECK(std::abs(th2[0]) < stepsz);
}

TEST_CASE("mean_second_moment") {
    AdamRConfig cfg;
    AdamRState st = state_for(4);
    CHECK_THROWS_AS(mean_second_moment(st, cfg), PreconditionError);
    std::vector<double> theta(4, 0.0);
    step1(theta, {2.0, 2.0, -2.0, 2.0}, {}, st, cfg);
    CHECK(mean_second_moment(st, cfg)[0] == doctest::Approx(4.0));

    const auto g = randn(50, 3, "g");
    AdamRState a = state_for(50);
    AdamRState b = state_for(50);
    std::vector<double> ta(50, 0.0), tb(50, 0.0);
    auto gr = g;
    std::reverse(gr.begin(), gr.end());
    step1(ta, g, {}, a, cfg);
    step1(tb, gr, {}, b, cfg);
    step1(ta, g, {}, a, cfg);
    step1(tb, gr, {}, b, cfg);
    CHECK(mean_second_moment(a, cfg)[0] == doctest::Approx(mean_second_moment(b, cfg)[0]));
    double ref = 0.0;
    const double bc = 1.0 - cfg.beta2 * cfg.beta2;
    for (double x : g) {
        const double v = cfg.beta2 * (1 - cfg.beta2) * x * x + (1 - cfg.beta2) * x * x;
        ref += v / bc;
    }
    CHECK(mean_second_moment(a, cfg)[0] == doctest::Approx(ref / 50.0));
}

TEST_CASE("errors leave state untouched") {
    AdamRConfig cfg;
    cfg.reg = Regularizer::l2;
    cfg.lambda = 0.1;
    std::vector<double> theta{1.0, 2.0};
    AdamRState st = state_for(2);
    step1(theta, {0.1, 0.2}, {0.0, 0.0}, st, cfg);
    const auto snap = theta;
    const auto m = st.m;
    CHECK_THROWS_AS(step1(theta, {std::numeric_limits<double>::quiet_NaN(), 0.0}, {0.0, 0.0}, st, cfg),
                    NumericError);
    CHECK_THROWS_AS(step1(theta, {std::numeric_limits<double>::infinity(), 0.0}, {0.0, 0.0}, st, cfg),
                    NumericError);
    CHECK_THROWS_AS(step1(theta, {0.1}, {0.0, 0.0}, st, cfg), DimensionError);
    CHECK_THROWS(step1(theta, {0.1, 0.1}, {}, st, cfg));
    CHECK(theta == snap);
    CHECK(st.m == m);
    CHECK(st.t == 1);

    AdamRConfig bad;
    bad.beta2 = 1.0;
    CHECK_THROWS(bad.validate());
    bad = AdamRConfig{};
    bad.lambda = -1.0;
    CHECK_THROWS(bad.validate());
    CHECK(parse_regularizer("l1") == Regularizer::l1);
    CHECK(to_string(Regularizer::l2) == "l2");
    CHECK_THROWS_AS(parse_regularizer("l3"), PreconditionError);
}
