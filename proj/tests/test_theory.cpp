#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dppx/errors.hpp"
#include "dppx/pruners.hpp"
#include "dppx/theory.hpp"

#include <cmath>
#include <limits>

using namespace dppx;

namespace {

double phi_direct(double p) { return (1.0 - 2.0 * p) / std::log((1.0 - p) / p); }

double objective_ref(double q, double eta, double p, double gamma, double s1, double s2) {
    const double a = std::log(2.0 / gamma);
    const double b = eta * (1.0 - (1.0 - p) / q) * s1;
    const double c = eta * eta * phi_direct(p) * s2 / (4.0 * q * q);
    return std::abs(a + b + c);
}

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    Matrix m(r, c);
    RngStream rng(seed, "m");
    for (float & v : m.flat()) {
        v = static_cast<float>(rng.next_normal());
    }
    return m;
}

std::vector<double> random_c(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    std::vector<double> c(n);
    RngStream rng(seed, "c");
    for (double & v : c) {
        v = scale * rng.next_normal();
    }
    return c;
}

double sum_sq(const std::vector<double> & c) {
    double s = 0.0;
    for (double v : c) {
        s += v * v;
    }
    return s;
}

}  // namespace

TEST_CASE("influence_stats") {
    const Vector x{1.0f, -1.0f};
    const InfluenceStats z = influence_stats(Matrix(3, 2), x);
    for (const auto & s : z) {
        CHECK(s.sum_c == 0.0);
        CHECK(s.sum_c2 == 0.0);
        CHECK(s.variance == 0.0);
    }
    const InfluenceStats h = influence_stats(Matrix(1, 2, std::vector<float>{1.0f, 1.0f}), x);
    CHECK(h[0].mean == 0.0);
    CHECK(h[0].variance == doctest::Approx(1.0));
    CHECK(h[0].sum_c2 == doctest::Approx(2.0));

    const Matrix w = random_matrix(16, 16, 3);
    Vector xs(16);
    RngStream rng(5, "x");
    for (float & v : xs) {
        v = static_cast<float>(rng.next_normal());
    }
    const InfluenceStats st = influence_stats(w, xs);
    for (std::size_t i = 0; i < 16; ++i) {
        double s1 = 0.0;
        double s2 = 0.0;
        for (std::size_t j = 0; j < 16; ++j) {
            const double c = static_cast<double>(w(i, j)) * xs[j];
            s1 += c;
            s2 += c * c;
        }
        const double mean = s1 / 16.0;
        double var = 0.0;
        for (std::size_t j = 0; j < 16; ++j) {
            const double c = static_cast<double>(w(i, j)) * xs[j];
            var += (c - mean) * (c - mean);
        }
        var /= 16.0;
        CHECK(st[i].sum_c == doctest::Approx(s1).epsilon(1e-6));
        CHECK(st[i].sum_c2 == doctest::Approx(s2).epsilon(1e-6));
        CHECK(st[i].mean == doctest::Approx(mean).epsilon(1e-6));
        CHECK(st[i].variance == doctest::Approx(var).epsilon(1e-6));
        CHECK(st[i].variance >= 0.0);
        CHECK(st[i].sum_c2 == doctest::Approx(16.0 * (mean * mean + var)).epsilon(1e-6));
    }
    CHECK_THROWS_AS(influence_stats(w, Vector(3)), DimensionError);
}

TEST_CASE("h_diff") {
    const Matrix w = random_matrix(5, 8, 1);
    const Vector x(8, 0.5f);
    DeltaSet d;
    d.entries.push_back(make_matrix_tensor("w", w));
    for (double v : h_diff(w, w, x)) {
        CHECK(v == 0.0);
    }
    const std::vector<double> full = h_diff(w, Matrix(5, 8), x);
    for (std::size_t i = 0; i < 5; ++i) {
        double ref = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
            ref += static_cast<double>(w(i, j)) * x[j];
        }
        CHECK(full[i] == doctest::Approx(ref));
    }
    // sparse overload agrees with dense
    const PruneResult r = dare(d, 0.5, 4);
    const std::vector<double> a = h_diff(w, r.sparse.tensors[0], x);
    const std::vector<double> b = h_diff(w, r.sparse.tensors[0].densify(), x);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(a[i] == doctest::Approx(b[i]));
    }
    CHECK_THROWS_AS(h_diff(w, Matrix(5, 7), x), DimensionError);
}

TEST_CASE("dare h_diff has zero mean") {
    const Matrix w = random_matrix(1, 32, 9);
    const Vector x(32, 1.0f);
    DeltaSet d;
    d.entries.push_back(make_matrix_tensor("w", w));
    const int trials = 10000;
    double sum = 0.0;
    double sum2 = 0.0;
    for (int t = 0; t < trials; ++t) {
        const double h = h_diff(w, dare(d, 0.5, static_cast<std::uint64_t>(t)).sparse.tensors[0], x)[0];
        sum += h;
        sum2 += h * h;
    }
    const double mean = sum / trials;
    const double sd = std::sqrt(sum2 / trials - mean * mean) / std::sqrt(trials);
    CHECK(std::abs(mean) < 4.0 * sd);
}

TEST_CASE("phi") {
    CHECK(phi(0.5) == doctest::Approx(0.5));
    CHECK(phi(0.5 + 1e-6) == doctest::Approx(phi_direct(0.5 + 1e-6)).epsilon(1e-8));
    CHECK(phi(0.5 - 1e-6) == doctest::Approx(phi_direct(0.5 - 1e-6)).epsilon(1e-8));
    CHECK(phi(0.5 + 5e-5) == doctest::Approx(phi_direct(0.5 + 5e-5)).epsilon(1e-8));
    // decays like 1/log(1/p), so only logarithmically
    CHECK(phi(1e-6) == doctest::Approx(phi_direct(1e-6)));
    CHECK(phi(1.0 - 1e-6) == doctest::Approx(phi(1e-6)).epsilon(1e-6));
    CHECK(phi(1e-100) < 5e-3);
    CHECK(phi(1e-300) < phi(1e-100));
    double prev = 0.5;
    for (double p = 0.49; p > 1e-12; p /= 2.0) {
        CHECK(phi(p) < prev);
        CHECK(phi(1.0 - p) == doctest::Approx(phi(p)).epsilon(1e-6));
        prev = phi(p);
    }
    CHECK(phi(0.9) == doctest::Approx(-0.8 / std::log(1.0 / 9.0)));
    CHECK(phi(0.9) == doctest::Approx(0.3641).epsilon(1e-3));
    CHECK_THROWS_AS(phi(0.0), DomainError);
    CHECK_THROWS_AS(phi(1.0), DomainError);
}

TEST_CASE("bound factors") {
    const double g1 = 2.0 / std::exp(1.0);  // log(2/g) = 1
    CHECK(bound_factor(BoundKind::hoeffding, 0.5, g1) == doctest::Approx(std::sqrt(2.0)));
    CHECK(bound_factor(BoundKind::berend_kontorovich, 0.99, g1) == doctest::Approx(14.071).epsilon(1e-4));
    CHECK(bound_factor(BoundKind::chebyshev, 0.5, 0.05) == doctest::Approx(std::sqrt(1.0 / 0.05)));
    CHECK(bound_factor(BoundKind::kearns_saul, 0.9, g1) == doctest::Approx(std::sqrt(phi(0.9)) / 0.1));
    CHECK_THROWS_AS(bound_factor(BoundKind::berend_kontorovich, 0.3, 0.05), DomainError);
    CHECK_THROWS_AS(bound_factor(BoundKind::hoeffding, 0.5, 0.0), DomainError);
    CHECK_THROWS_AS(bound_factor(BoundKind::hoeffding, 1.0, 0.05), DomainError);

    for (int i = 1; i <= 99; ++i) {
        const double p = i / 100.0;
        CHECK(phi(p) <= 0.5 + 1e-15);
        const double ks = bound_factor(BoundKind::kearns_saul, p, 0.05);
        CHECK(ks <= bound_factor(BoundKind::hoeffding, p, 0.05) + 1e-12);
        if (p >= 0.5) {
            CHECK(bound_factor(BoundKind::berend_kontorovich, p, 0.05) <= ks + 1e-12);
        }
    }
}

TEST_CASE("theorem1 dispatch and bound") {
    CHECK(theorem1_factor(0.3, 0.05) == bound_factor(BoundKind::kearns_saul, 0.3, 0.05));
    CHECK(theorem1_factor(0.7, 0.05) == bound_factor(BoundKind::berend_kontorovich, 0.7, 0.05));
    CHECK(theorem1_factor(0.3, 0.05, SmallPFactor::phi) ==
          doctest::Approx(phi(0.3) * std::sqrt(std::log(40.0)) / 0.7));

    BoundInputs in;
    in.p = 0.9;
    in.stats = influence_stats(Matrix(2, 3), Vector(3, 1.0f));
    for (double b : theorem1_bound(in)) {
        CHECK(b == 0.0);
    }
    const Matrix w = random_matrix(4, 10, 2);
    Matrix w2 = w;
    for (float & v : w2.flat()) {
        v *= 2.0f;
    }
    in.stats = influence_stats(w, Vector(10, 1.0f));
    const auto b1 = theorem1_bound(in);
    in.stats = influence_stats(w2, Vector(10, 1.0f));
    const auto b2 = theorem1_bound(in);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(b2[i] == doctest::Approx(2.0 * b1[i]));
    }

    double prev = 0.0;
    for (double p = 0.5; p <= 0.999; p += 0.001) {
        const double f = theorem1_factor(p, 0.05);
        CHECK(f >= prev);
        prev = f;
    }
}

TEST_CASE("mc_violation trivial bounds") {
    const auto c = random_c(64, 1);
    CHECK(mc_violation_rate(c, 0.5, 0.5, std::numeric_limits<double>::infinity(), 500, 1) == 0.0);
    CHECK(mc_violation_rate(c, 0.5, 0.5, 0.0, 500, 1) > 0.99);
    CHECK(mc_violation_rate(c, 0.5, 0.5, 1.0, 300, 7) == mc_violation_rate(c, 0.5, 0.5, 1.0, 300, 7));
}

TEST_CASE("theorem1 holds in simulation at n=4096") {
    const auto c = random_c(4096, 3);
    const double bound = theorem1_factor(0.9, 0.05) * std::sqrt(sum_sq(c));
    const McOutcome r = mc_violation(c, 0.9, 0.1, bound, 10000, 11);
    CHECK(r.trials == 10000);
    CHECK(r.rate <= 0.05);
}

TEST_CASE("theorem1 violation rate over a p x stats grid") {
    const double gamma = 0.05;
    const std::size_t trials = 2000;
    const double slack = 3.0 * std::sqrt(gamma * (1.0 - gamma) / trials);
    for (double p : {0.1, 0.5, 0.9, 0.99}) {
        for (std::uint64_t s = 0; s < 4; ++s) {
            std::vector<double> c = random_c(256 << s, 100 + s, 0.1 * static_cast<double>(s + 1));
            if (s == 3) {
                for (double & v : c) {
                    v = std::abs(v);
                }
            }
            const double bound = theorem1_factor(p, gamma) * std::sqrt(sum_sq(c));
            CHECK(mc_violation_rate(c, p, 1.0 - p, bound, trials, s) <= gamma + slack);
        }
    }
}

TEST_CASE("q_eta_objective") {
    for (double q : {0.1, 0.5, 2.0}) {
        CHECK(q_eta_objective(q, 3.0, 0.9, 0.05, 0.0, 0.0) == doctest::Approx(std::log(40.0)));
    }
    const double v = q_eta_objective(0.1, 2.0, 0.9, 0.05, 7.0, 3.0);
    CHECK(v == doctest::Approx(std::log(40.0) + 4.0 * phi(0.9) * 3.0 / (4.0 * 0.01)));
    CHECK(q_eta_objective(0.37, 1.3, 0.6, 0.1, -2.0, 5.0) ==
          doctest::Approx(objective_ref(0.37, 1.3, 0.6, 0.1, -2.0, 5.0)));
    CHECK_THROWS_AS(q_eta_objective(0.0, 1.0, 0.5, 0.05, 1.0, 1.0), DomainError);
    CHECK_THROWS_AS(q_eta_objective(0.5, 0.0, 0.5, 0.05, 1.0, 1.0), DomainError);
}

TEST_CASE("grid minimum matches a dense scan") {
    const double p = 0.9;
    const double dq = 1e-3;
    const auto grid = q_grid(p, dq, 0, 1000);
    CHECK(grid.front() == doctest::Approx(0.1));
    CHECK(grid.back() == doctest::Approx(1.1));
    NeuronStats st;
    st.sum_c = 10.0;
    st.sum_c2 = 4.0;
    const QEtaChoice ch = q_eta_minimize(1.0, p, 0.05, std::span<const NeuronStats>(&st, 1), grid);
    double best_q = 0.0;
    double best = 1e300;
    for (int i = 0; i <= 100000; ++i) {
        const double q = 0.1 + i * (1.0 / 100000.0);
        const double v = objective_ref(q, 1.0, p, 0.05, 10.0, 4.0);
        if (v < best) {
            best = v;
            best_q = q;
        }
    }
    CHECK(std::abs(ch.q - best_q) <= dq + 1e-12);
    CHECK(ch.index > 0);
    CHECK(ch.index < grid.size() - 1);
}

TEST_CASE("q_eta_minimize against exhaustive oracle") {
    NeuronStats zero;
    const auto grid = q_grid(0.5, 0.01, 0, 50);
    CHECK(q_eta_minimize(1.0, 0.5, 0.05, std::span<const NeuronStats>(&zero, 1), grid).q == grid.front());
    CHECK_THROWS(q_eta_minimize(1.0, 0.5, 0.05, std::span<const NeuronStats>(&zero, 1), {}));

    RngStream rng(42, "cases");
    for (int k = 0; k < 100; ++k) {
        const double p = 0.05 + 0.9 * rng.next_uniform();
        const double eta = std::exp(rng.next_normal());
        std::vector<NeuronStats> stats(1 + rng.next_below(5));
        for (auto & s : stats) {
            s.sum_c = 5.0 * rng.next_normal();
            s.sum_c2 = std::abs(s.sum_c) * (1.0 + rng.next_uniform()) + rng.next_uniform();
        }
        const auto g = q_grid(p, 0.01, 0, 200);
        std::size_t best_i = 0;
        double best = 1e300;
        for (std::size_t i = 0; i < g.size(); ++i) {
            double m = 0.0;
            for (const auto & s : stats) {
                m += objective_ref(g[i], eta, p, 0.05, s.sum_c, s.sum_c2);
            }
            m /= static_cast<double>(stats.size());
            if (m < best - 1e-12 * std::abs(best)) {
                best = m;
                best_i = i;
            }
        }
        const QEtaChoice ch = q_eta_minimize(eta, p, 0.05, stats, g);
        CHECK(ch.objective == doctest::Approx(best).epsilon(1e-9));
        if (ch.index != best_i) {
            // only acceptable when the two grid points tie
            CHECK(ch.objective == doctest::Approx(best).epsilon(1e-12));
        }
    }
}

TEST_CASE("stationary point") {
    const double p = 0.9;
    const double g = 0.05;
    const double s1 = 100.0;
    const double s2 = 4.0;
    const double qs = q_stationary_point(p, g, s1, s2);
    CHECK(qs == doctest::Approx(0.1 - std::sqrt(std::log(40.0) * phi(p) * s2) / s1));
    CHECK(std::sqrt(std::log(2.0 / g) * phi(p) * s2) < (1.0 - p) * s1);
    CHECK(qs < 1.0 - p);
    CHECK_THROWS(q_stationary_point(p, g, 0.0, s2));
}

TEST_CASE("bound curves csv") {
    const std::vector<double> ps{0.25, 0.5, 0.75};
    const std::string csv = bound_curves_csv(ps, 0.05);
    CHECK(csv.rfind("p,chebyshev,hoeffding,ks,bk\n", 0) == 0);
    std::size_t lines = 0;
    for (char ch : csv) {
        lines += ch == '\n';
    }
    CHECK(lines == 4);
}
