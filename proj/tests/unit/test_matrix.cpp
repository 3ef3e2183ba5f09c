#include <doctest.h>

#include <cmath>
#include <limits>
#include <stdexcept>

#include "keymem/matrix.hpp"
#include "keymem/rng.hpp"
#include "test_util.hpp"

using namespace keymem;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (double& v : m.data) v = rng.normal();
    return m;
}

Matrix matmul_oracle(const Matrix& a, const Matrix& b) {
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < b.cols; ++j) {
            double sum = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) sum += a.at(i, k) * b.at(k, j);
            out.at(i, j) = sum;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("matmul matches a triple-loop oracle") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(9);
        const std::size_t m = 1 + rng.uniform_index(9);
        const std::size_t p = 1 + rng.uniform_index(9);
        const Matrix a = random_matrix(n, m, rng);
        const Matrix b = random_matrix(m, p, rng);
        const Matrix got = matmul(a, b);
        const Matrix want = matmul_oracle(a, b);
        REQUIRE(got.same_shape(want));
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got.data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("matmul rejects mismatched shapes with both shapes named") {
    const Matrix a(2, 3), b(4, 2);
    CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
    const std::string msg = thrown_message([&] { matmul(a, b); });
    CHECK(contains(msg, "2x3"));
    CHECK(contains(msg, "4x2"));
}

TEST_CASE("transpose round-trips and swaps entries") {
    Rng rng(5);
    const Matrix a = random_matrix(4, 7, rng);
    const Matrix t = transpose(a);
    REQUIRE(t.rows == 7);
    REQUIRE(t.cols == 4);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < a.cols; ++j) CHECK(t.at(j, i) == a.at(i, j));
    }
    const Matrix back = transpose(t);
    CHECK(back.data == a.data);
}

TEST_CASE("vecmat and matvec agree with explicit loops") {
    Rng rng(17);
    const Matrix a = random_matrix(5, 8, rng);
    Vec x5(5), x8(8);
    for (double& v : x5) v = rng.normal();
    for (double& v : x8) v = rng.normal();

    const Vec row = vecmat(x5, a);
    REQUIRE(row.size() == 8);
    for (std::size_t j = 0; j < 8; ++j) {
        double sum = 0.0;
        for (std::size_t i = 0; i < 5; ++i) sum += x5[i] * a.at(i, j);
        CHECK(row[j] == doctest::Approx(sum).epsilon(1e-12));
    }

    const Vec col = matvec(a, x8);
    REQUIRE(col.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 8; ++j) sum += a.at(i, j) * x8[j];
        CHECK(col[i] == doctest::Approx(sum).epsilon(1e-12));
    }
}

TEST_CASE("add_outer accumulates the outer product") {
    Matrix grad(2, 3, 1.0);
    const Vec x{2.0, -1.0};
    const Vec y{1.0, 0.5, 3.0};
    add_outer(grad, x, y);
    CHECK(grad.at(0, 0) == 3.0);
    CHECK(grad.at(0, 1) == 2.0);
    CHECK(grad.at(0, 2) == 7.0);
    CHECK(grad.at(1, 0) == 0.0);
    CHECK(grad.at(1, 1) == 0.5);
    CHECK(grad.at(1, 2) == -2.0);
    CHECK_THROWS_AS(add_outer(grad, y, x), std::invalid_argument);
}

TEST_CASE("dot, l2_norm, axpy and scale basics") {
    const Vec a{3.0, 4.0};
    const Vec b{1.0, -2.0};
    CHECK(dot(a, b) == -5.0);
    CHECK(l2_norm(a) == 5.0);

    Vec y{1.0, 1.0};
    axpy(2.0, b, y);
    CHECK(y == Vec{3.0, -3.0});
    scale(y, 0.5);
    CHECK(y == Vec{1.5, -1.5});
}

TEST_CASE("softmax normalizes, shifts cancel, scale sharpens") {
    Rng rng(23);
    Vec v(9);
    for (double& e : v) e = rng.normal(0.0, 3.0);

    const Vec p = softmax(v);
    double sum = 0.0;
    for (const double e : p) {
        CHECK(e > 0.0);
        sum += e;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    Vec shifted = v;
    for (double& e : shifted) e += 123.0;
    const Vec q = softmax(shifted);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(q[i] == doctest::Approx(p[i]).epsilon(1e-9));
    }

    Vec doubled = v;
    for (double& e : doubled) e *= 2.0;
    const Vec sharp = softmax(v, 2.0);
    const Vec sharp_oracle = softmax(doubled);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(sharp[i] == doctest::Approx(sharp_oracle[i]).epsilon(1e-12));
    }

    CHECK_THROWS_AS(softmax(Vec{}), std::invalid_argument);
    CHECK_THROWS_AS(softmax(v, 0.0), std::invalid_argument);
}

TEST_CASE("cholesky factors SPD matrices and solves systems") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + rng.uniform_index(6);
        const Matrix b = random_matrix(n, n, rng);
        Matrix spd = matmul(b, transpose(b));
        for (std::size_t i = 0; i < n; ++i) spd.at(i, i) += static_cast<double>(n);

        const Cholesky ch(spd);
        const Matrix rebuilt = matmul(ch.lower, transpose(ch.lower));
        for (std::size_t i = 0; i < spd.size(); ++i) {
            CHECK(rebuilt.data[i] == doctest::Approx(spd.data[i]).epsilon(1e-10));
        }

        Vec rhs(n);
        for (double& v : rhs) v = rng.normal();
        const Vec x = ch.solve(rhs);
        const Vec back = matvec(spd, x);
        for (std::size_t i = 0; i < n; ++i) {
            CHECK(back[i] == doctest::Approx(rhs[i]).epsilon(1e-8));
        }
    }
}

TEST_CASE("cholesky rejects non-positive-definite input") {
    Matrix neg(2, 2);
    neg.at(0, 0) = -1.0;
    neg.at(1, 1) = -1.0;
    CHECK_THROWS_AS(Cholesky{neg}, std::runtime_error);
    CHECK_THROWS_AS(Cholesky{Matrix(2, 3)}, std::invalid_argument);
}

TEST_CASE("check_finite names the offending index") {
    Vec v{1.0, std::nan(""), 2.0};
    CHECK_THROWS_AS(check_finite(v, "unit"), std::runtime_error);
    CHECK(contains(thrown_message([&] { check_finite(v, "unit"); }), "index 1"));
    v[1] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(check_finite(v, "unit"), std::runtime_error);
    v[1] = 0.0;
    CHECK_NOTHROW(check_finite(v, "unit"));
}
