// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices and the small set of kernels the transformer,
// the memory modules and NL-SVD are built on. Everything is double precision.
#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace locas {

using Vector = std::vector<double>;

class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    // Appends one row; an empty matrix adopts the row's width.
    void append_row(std::span<const double> values);
    // Keeps the listed rows, in the given order.
    Matrix select_rows(std::span<const std::size_t> indices) const;
    Matrix transposed() const;
    void set_zero();

    static Matrix identity(std::size_t n);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// ---------------------------------------------------------------- kernels

// X·Y, with X (n×k) and Y (k×m).
Matrix matmul(const Matrix& x, const Matrix& y);
// X·Wᵀ, with X (n×k) and W (m×k). This is the "apply a linear layer" shape.
Matrix matmul_nt(const Matrix& x, const Matrix& w);
// acc += Aᵀ·B, with A (n×p) and B (n×q). Weight-gradient accumulation.
void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& acc);

void add_inplace(Matrix& dst, const Matrix& src);
void add_scaled_inplace(Matrix& dst, const Matrix& src, double scale);
void scale_inplace(Matrix& m, double s);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
double frobenius_norm(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
double max_abs_diff(std::span<const double> a, std::span<const double> b);

bool all_finite(std::span<const double> v);
// Throws NumericalError naming `what` if any entry is NaN or infinite.
void require_finite(std::span<const double> v, std::string_view what);

// ------------------------------------------------------------ activations

enum class ActivationKind { relu, silu, gelu };

ActivationKind parse_activation(std::string_view name);
std::string_view to_string(ActivationKind kind);

double logistic(double x);
double activate(ActivationKind kind, double x);
double activate_derivative(ActivationKind kind, double x);

// Element-wise φ(x). Throws NumericalError on non-finite input.
Vector activation(ActivationKind kind, std::span<const double> x);

// ----------------------------------------------------------- normalization

struct RowNormalization {
    Matrix normalized;
    Vector norms;
    // Rows whose norm fell below the floor; those rows are left unscaled.
    std::vector<bool> degenerate;
};

RowNormalization normalize_rows(const Matrix& m, double floor);

// One token's gradient, one vector per layer.
using LayerVectors = std::vector<Vector>;

// Scales the concatenation of all layers' vectors to unit L2 norm.
// Throws DegenerateGradient when every entry is zero.
LayerVectors global_normalize(const LayerVectors& grads);

}  // namespace locas
