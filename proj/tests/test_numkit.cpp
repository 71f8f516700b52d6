#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "dppx/errors.hpp"
#include "dppx/numkit.hpp"

#include <cmath>
#include <vector>

using namespace dppx;

TEST_CASE("rmsnorm fixed points and hand values") {
    const Vector ones{1, 1, 1, 1};
    const Vector out = rmsnorm(ones, ones, 0.0);
    for (float v : out) {
        CHECK(v == doctest::Approx(1.0));
    }

    const Vector zeros{0, 0};
    const Vector g2{1, 1};
    for (float v : rmsnorm(zeros, g2, 1e-6)) {
        CHECK(v == 0.0f);
    }

    // Scalar reference: x / sqrt((9 + 16) / 2)
    const Vector x{3, 4};
    const Vector y = rmsnorm(x, g2, 0.0);
    const double r = std::sqrt((3.0 * 3.0 + 4.0 * 4.0) / 2.0);
    CHECK(y[0] == doctest::Approx(3.0 / r).epsilon(1e-6));
    CHECK(y[1] == doctest::Approx(4.0 / r).epsilon(1e-6));
    CHECK(y[0] == doctest::Approx(0.8485).epsilon(1e-4));
    CHECK(y[1] == doctest::Approx(1.1314).epsilon(1e-4));
}

TEST_CASE("rmsnorm applies the gain and rejects bad arguments") {
    const Vector x{3, 4};
    const Vector g{2, -1};
    const Vector y = rmsnorm(x, g, 0.0);
    CHECK(y[0] == doctest::Approx(2 * 0.848528).epsilon(1e-5));
    CHECK(y[1] == doctest::Approx(-1.131371).epsilon(1e-5));
    CHECK_THROWS_AS(rmsnorm(x, Vector{1}, 1e-6), DimensionError);
    CHECK_THROWS_AS(rmsnorm(x, g, -1.0), DomainError);
}

TEST_CASE("relu") {
    CHECK(relu(Vector{-1, 0, 2}) == Vector{0, 0, 2});
    CHECK(relu(Vector{-3, -0.5f}) == Vector{0, 0});
    const Vector pos{0, 1.5f, 7};
    CHECK(relu(pos) == pos);
}

TEST_CASE("bernoulli_mask extremes and rate") {
    RngStream s(1, "mask");
    const Matrix all = bernoulli_mask(4, 5, 1.0, s);
    for (float v : all.flat()) {
        CHECK(v == 1.0f);
    }
    const Matrix none = bernoulli_mask(4, 5, 0.0, s);
    for (float v : none.flat()) {
        CHECK(v == 0.0f);
    }
    RngStream big(42, "rate");
    const Matrix m = bernoulli_mask(1000, 1000, 0.3, big);
    double kept = 0;
    for (float v : m.flat()) {
        kept += v;
    }
    CHECK(std::abs(kept / 1e6 - 0.3) < 0.005);
    CHECK_THROWS_AS(bernoulli_mask(2, 2, 1.5, s), DomainError);
    CHECK_THROWS_AS(bernoulli_mask(2, 2, -0.1, s), DomainError);
}

TEST_CASE("matvec examples and reference agreement") {
    const Vector x{1, -2, 3};
    CHECK(matvec(Matrix::identity(3), x) == x);
    CHECK(matvec(Matrix(2, 3), x) == Vector{0, 0});
    const Matrix w(2, 2, std::vector<float>{1, 2, 3, 4});
    CHECK(matvec(w, Vector{1, 1}) == Vector{3, 7});
    CHECK_THROWS_AS(matvec(w, x), DimensionError);

    RngStream rng(9, "matvec");
    Matrix a(64, 64);
    Vector v(64);
    for (float & e : a.flat()) {
        e = static_cast<float>(rng.next_normal());
    }
    for (float & e : v) {
        e = static_cast<float>(rng.next_normal());
    }
    const Vector got = matvec(a, v);
    for (std::size_t i = 0; i < 64; ++i) {
        double ref = 0;
        for (std::size_t j = 0; j < 64; ++j) {
            ref += static_cast<double>(a(i, j)) * v[j];
        }
        CHECK(std::abs(got[i] - ref) <= 1e-5 * std::max(1.0, std::abs(ref)));
    }
}

TEST_CASE("keyed streams are deterministic and order independent") {
    RngStream a1(7, "layer.a");
    RngStream b1(7, "layer.b");
    std::vector<std::uint64_t> seq_a;
    std::vector<std::uint64_t> seq_b;
    // Interleaved consumption
    for (int i = 0; i < 100; ++i) {
        seq_a.push_back(a1.next_u64());
        seq_b.push_back(b1.next_u64());
    }
    RngStream a2(7, "layer.a");
    for (int i = 0; i < 100; ++i) {
        CHECK(a2.next_u64() == seq_a[i]);
    }
    RngStream b2(7, "layer.b");
    for (int i = 0; i < 100; ++i) {
        CHECK(b2.next_u64() == seq_b[i]);
    }
    CHECK(seq_a != seq_b);
    CHECK(RngStream(8, "layer.a").next_u64() != seq_a[0]);
    CHECK(a1.child("x").key() == "layer.a/x");
}

TEST_CASE("masks of distinct keys pass a chi-square independence check") {
    RngStream a(3, "w1");
    RngStream b(3, "w2");
    const int n = 100000;
    double counts[2][2] = {{0, 0}, {0, 0}};
    for (int i = 0; i < n; ++i) {
        counts[a.next_bernoulli(0.5)][b.next_bernoulli(0.5)] += 1;
    }
    double chi2 = 0;
    const double row0 = counts[0][0] + counts[0][1];
    const double col0 = counts[0][0] + counts[1][0];
    const double rows[2] = {row0, n - row0};
    const double cols[2] = {col0, n - col0};
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            const double e = rows[i] * cols[j] / n;
            chi2 += (counts[i][j] - e) * (counts[i][j] - e) / e;
        }
    }
    // 1 degree of freedom, alpha = 0.01
    CHECK(chi2 < 6.635);
}

TEST_CASE("uniform, normal and bounded draws") {
    RngStream s(11, "dist");
    double sum = 0;
    double sum_sq = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double z = s.next_normal();
        sum += z;
        sum_sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.02);
    CHECK(std::abs(sum_sq / n - 1.0) < 0.02);
    for (int i = 0; i < 1000; ++i) {
        const double u = s.next_uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(s.next_below(7) < 7);
    }
    CHECK_THROWS_AS(s.next_below(0), DomainError);
}

TEST_CASE("64-bit reductions and finiteness checks") {
    const Vector a{1e8f, 1, -1e8f};
    CHECK(mean64(a) == doctest::Approx(1.0 / 3.0));
    CHECK(dot64(Vector{1, 2}, Vector{3, 4}) == 11.0);
    CHECK_THROWS_AS(dot64(Vector{1}, Vector{1, 2}), DimensionError);
    CHECK_NOTHROW(require_finite(a, "a"));
    CHECK_THROWS_AS(require_finite(Vector{1, NAN}, "b"), NumericError);
    CHECK_THROWS_AS(require_finite(Vector{INFINITY}, "c"), NumericError);

    Matrix batch(2, 2, std::vector<float>{3, 0, 4, 1});
    const Vector norms = column_norms(batch);
    CHECK(norms[0] == doctest::Approx(5.0));
    CHECK(norms[1] == doctest::Approx(1.0));
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<float>{1}), DimensionError);
}
