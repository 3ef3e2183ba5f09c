#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace keymem {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles. All training and verification math runs
// in double precision; checkpoints narrow to float on disk.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major, data.size() == rows * cols

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), data(r * c, fill) {}

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> init);

    double& at(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }

    bool same_shape(const Matrix& other) const {
        return rows == other.rows && cols == other.cols;
    }
    std::size_t size() const { return data.size(); }
};

// Standard product; throws std::invalid_argument naming both shapes on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

// y = x * a where x is a row vector of length a.rows; result length a.cols.
Vec vecmat(std::span<const double> x, const Matrix& a);
// y = a * x where x has length a.cols; result length a.rows.
Vec matvec(const Matrix& a, std::span<const double> x);

// grad += outer(x, y), shapes (|x| x |y|).
void add_outer(Matrix& grad, std::span<const double> x, std::span<const double> y);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

void axpy(double alpha, std::span<const double> x, std::span<double> y);  // y += alpha*x
void scale(std::span<double> v, double alpha);

// Max-subtracted softmax of scale*v. Requires nonempty v and scale > 0.
Vec softmax(std::span<const double> v, double scale = 1.0);

// Throws std::runtime_error if any entry is NaN or infinite.
void check_finite(std::span<const double> v, const char* what);
void check_finite(const Matrix& m, const char* what);

// Cholesky factorization of a symmetric positive-definite matrix (lower factor).
// Throws std::runtime_error if the matrix is not numerically positive definite.
struct Cholesky {
    Matrix lower;
    explicit Cholesky(const Matrix& spd);
    Vec solve(std::span<const double> b) const;
};

std::string shape_str(const Matrix& m);

// Named view over a parameter buffer, in a fixed traversal order shared by
// checkpoints, the optimizer and gradient flattening.
struct TensorRef {
    std::string name;
    double* data;
    std::size_t size;
    std::size_t rows;  // rows/cols describe the logical shape (vectors: rows=1)
    std::size_t cols;
};

}  // namespace keymem
