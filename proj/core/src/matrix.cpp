#include "keymem/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace keymem {

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> init) {
    Matrix m;
    m.rows = init.size();
    m.cols = init.size() == 0 ? 0 : init.begin()->size();
    m.data.reserve(m.rows * m.cols);
    for (const auto& r : init) {
        if (r.size() != m.cols) {
            throw std::invalid_argument("Matrix::from_rows: ragged initializer");
        }
        m.data.insert(m.data.end(), r.begin(), r.end());
    }
    return m;
}

std::string shape_str(const Matrix& m) {
    return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: shape mismatch " + shape_str(a) + " * " +
                                    shape_str(b));
    }
    Matrix out(a.rows, b.cols, 0.0);
    // i-k-j loop order keeps the inner loop contiguous over b and out.
    for (std::size_t i = 0; i < a.rows; ++i) {
        const double* arow = a.data.data() + i * a.cols;
        double* orow = out.data.data() + i * out.cols;
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double aik = arow[k];
            if (aik == 0.0) continue;
            const double* brow = b.data.data() + k * b.cols;
            for (std::size_t j = 0; j < b.cols; ++j) {
                orow[j] += aik * brow[j];
            }
        }
    }
    check_finite(out, "matmul");
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols, m.rows);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            out.at(j, i) = m.at(i, j);
        }
    }
    return out;
}

Vec vecmat(std::span<const double> x, const Matrix& a) {
    if (x.size() != a.rows) {
        throw std::invalid_argument("vecmat: vector length " + std::to_string(x.size()) +
                                    " vs matrix " + shape_str(a));
    }
    Vec out(a.cols, 0.0);
    for (std::size_t k = 0; k < a.rows; ++k) {
        const double xk = x[k];
        if (xk == 0.0) continue;
        const double* arow = a.data.data() + k * a.cols;
        for (std::size_t j = 0; j < a.cols; ++j) {
            out[j] += xk * arow[j];
        }
    }
    return out;
}

Vec matvec(const Matrix& a, std::span<const double> x) {
    if (x.size() != a.cols) {
        throw std::invalid_argument("matvec: matrix " + shape_str(a) + " vs vector length " +
                                    std::to_string(x.size()));
    }
    Vec out(a.rows, 0.0);
    for (std::size_t i = 0; i < a.rows; ++i) {
        out[i] = dot(a.row(i), x);
    }
    return out;
}

void add_outer(Matrix& grad, std::span<const double> x, std::span<const double> y) {
    if (grad.rows != x.size() || grad.cols != y.size()) {
        throw std::invalid_argument("add_outer: grad " + shape_str(grad) + " vs " +
                                    std::to_string(x.size()) + "x" + std::to_string(y.size()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = x[i];
        if (xi == 0.0) continue;
        double* grow = grad.data.data() + i * grad.cols;
        for (std::size_t j = 0; j < y.size(); ++j) {
            grow[j] += xi * y[j];
        }
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

double l2_norm(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void scale(std::span<double> v, double alpha) {
    for (double& e : v) e *= alpha;
}

Vec softmax(std::span<const double> v, double sc) {
    if (v.empty()) {
        throw std::invalid_argument("softmax: empty input");
    }
    if (!(sc > 0.0)) {
        throw std::invalid_argument("softmax: scale must be positive");
    }
    double maxv = v[0] * sc;
    for (const double e : v) maxv = std::max(maxv, e * sc);
    Vec out(v.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] * sc - maxv);
        sum += out[i];
    }
    for (double& e : out) e /= sum;
    check_finite(out, "softmax");
    return out;
}

void check_finite(std::span<const double> v, const char* what) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) {
            throw std::runtime_error(std::string(what) + ": non-finite value at index " +
                                     std::to_string(i));
        }
    }
}

void check_finite(const Matrix& m, const char* what) {
    check_finite(std::span<const double>(m.data), what);
}

Cholesky::Cholesky(const Matrix& spd) {
    if (spd.rows != spd.cols) {
        throw std::invalid_argument("cholesky: matrix not square " + shape_str(spd));
    }
    const std::size_t n = spd.rows;
    lower = Matrix(n, n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double sum = spd.at(i, j);
            for (std::size_t k = 0; k < j; ++k) sum -= lower.at(i, k) * lower.at(j, k);
            if (i == j) {
                if (sum <= 0.0 || !std::isfinite(sum)) {
                    throw std::runtime_error("cholesky: matrix not positive definite at pivot " +
                                             std::to_string(i));
                }
                lower.at(i, i) = std::sqrt(sum);
            } else {
                lower.at(i, j) = sum / lower.at(j, j);
            }
        }
    }
}

Vec Cholesky::solve(std::span<const double> b) const {
    const std::size_t n = lower.rows;
    if (b.size() != n) {
        throw std::invalid_argument("cholesky solve: rhs length mismatch");
    }
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = b[i];
        for (std::size_t k = 0; k < i; ++k) sum -= lower.at(i, k) * y[k];
        y[i] = sum / lower.at(i, i);
    }
    Vec x(n);
    for (std::size_t ii = n; ii-- > 0;) {
        double sum = y[ii];
        for (std::size_t k = ii + 1; k < n; ++k) sum -= lower.at(k, ii) * x[k];
        x[ii] = sum / lower.at(ii, ii);
    }
    return x;
}

}  // namespace keymem
