// SPDX-License-Identifier: Apache-2.0
#include "locas/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "locas/errors.hpp"

namespace locas {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
    }
}

void Matrix::append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) {
        cols_ = values.size();
    }
    if (values.size() != cols_) {
        throw ShapeError("append_row: width " + std::to_string(values.size()) +
                         " != " + std::to_string(cols_));
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= rows_) {
            throw ShapeError("select_rows: index out of range");
        }
        std::copy_n(row(indices[i]).begin(), cols_, out.row(i).begin());
    }
    return out;
}

Matrix Matrix::transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            t(c, r) = (*this)(r, c);
        }
    }
    return t;
}

void Matrix::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

// ---------------------------------------------------------------- kernels

Matrix matmul(const Matrix& x, const Matrix& y) {
    if (x.cols() != y.rows()) {
        throw ShapeError("matmul: inner dimensions " + std::to_string(x.cols()) +
                         " and " + std::to_string(y.rows()) + " differ");
    }
    const std::size_t n = x.rows();
    const std::size_t k = x.cols();
    const std::size_t m = y.cols();
    Matrix out(n, m);
    for (std::size_t i = 0; i < n; ++i) {
        double* dst = out.row(i).data();
        const double* src = x.row(i).data();
        for (std::size_t p = 0; p < k; ++p) {
            const double s = src[p];
            if (s == 0.0) {
                continue;
            }
            const double* yr = y.row(p).data();
            for (std::size_t j = 0; j < m; ++j) {
                dst[j] += s * yr[j];
            }
        }
    }
    return out;
}

Matrix matmul_nt(const Matrix& x, const Matrix& w) {
    if (x.cols() != w.cols()) {
        throw ShapeError("matmul_nt: input width " + std::to_string(x.cols()) +
                         " != weight width " + std::to_string(w.cols()));
    }
    if (w.rows() == 0) {
        return Matrix(x.rows(), 0);
    }
    return matmul(x, w.transposed());
}

void matmul_tn_acc(const Matrix& a, const Matrix& b, Matrix& acc) {
    if (a.rows() != b.rows() || acc.rows() != a.cols() || acc.cols() != b.cols()) {
        throw ShapeError("matmul_tn_acc: shape mismatch");
    }
    const std::size_t q = b.cols();
    for (std::size_t t = 0; t < a.rows(); ++t) {
        const double* ar = a.row(t).data();
        const double* br = b.row(t).data();
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double s = ar[p];
            if (s == 0.0) {
                continue;
            }
            double* dst = acc.row(p).data();
            for (std::size_t j = 0; j < q; ++j) {
                dst[j] += s * br[j];
            }
        }
    }
}

void add_inplace(Matrix& dst, const Matrix& src) {
    if (dst.rows() != src.rows() || dst.cols() != src.cols()) {
        throw ShapeError("add_inplace: shape mismatch");
    }
    auto& d = dst.data();
    const auto& s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += s[i];
    }
}

void add_scaled_inplace(Matrix& dst, const Matrix& src, double scale) {
    if (dst.rows() != src.rows() || dst.cols() != src.cols()) {
        throw ShapeError("add_scaled_inplace: shape mismatch");
    }
    auto& d = dst.data();
    const auto& s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += scale * s[i];
    }
}

void scale_inplace(Matrix& m, double s) {
    for (double& v : m.data()) {
        v *= s;
    }
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

double l2_norm(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double frobenius_norm(const Matrix& m) { return l2_norm(m.data()); }

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("max_abs_diff: length mismatch");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError("max_abs_diff: shape mismatch");
    }
    return max_abs_diff(std::span<const double>(a.data()), std::span<const double>(b.data()));
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_finite(std::span<const double> v, std::string_view what) {
    if (!all_finite(v)) {
        throw NumericalError(std::string(what) + " contains non-finite values");
    }
}

// ------------------------------------------------------------ activations

ActivationKind parse_activation(std::string_view name) {
    if (name == "relu") return ActivationKind::relu;
    if (name == "silu") return ActivationKind::silu;
    if (name == "gelu") return ActivationKind::gelu;
    throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view to_string(ActivationKind kind) {
    switch (kind) {
        case ActivationKind::relu: return "relu";
        case ActivationKind::silu: return "silu";
        case ActivationKind::gelu: return "gelu";
    }
    return "?";
}

double logistic(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

namespace {

constexpr double kGeluC = 0.044715;
const double kGeluK = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

double activate(ActivationKind kind, double x) {
    switch (kind) {
        case ActivationKind::relu:
            return x > 0.0 ? x : 0.0;
        case ActivationKind::silu:
            return x * logistic(x);
        case ActivationKind::gelu:
            return 0.5 * x * (1.0 + std::tanh(kGeluK * (x + kGeluC * x * x * x)));
    }
    return 0.0;
}

double activate_derivative(ActivationKind kind, double x) {
    switch (kind) {
        case ActivationKind::relu:
            return x > 0.0 ? 1.0 : 0.0;
        case ActivationKind::silu: {
            const double s = logistic(x);
            return s * (1.0 + x * (1.0 - s));
        }
        case ActivationKind::gelu: {
            const double u = kGeluK * (x + kGeluC * x * x * x);
            const double th = std::tanh(u);
            const double du = kGeluK * (1.0 + 3.0 * kGeluC * x * x);
            return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
        }
    }
    return 0.0;
}

Vector activation(ActivationKind kind, std::span<const double> x) {
    require_finite(x, "activation input");
    Vector out(x.size());
    std::transform(x.begin(), x.end(), out.begin(),
                   [kind](double v) { return activate(kind, v); });
    return out;
}

// ----------------------------------------------------------- normalization

RowNormalization normalize_rows(const Matrix& m, double floor) {
    RowNormalization out{m, Vector(m.rows()), std::vector<bool>(m.rows(), false)};
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const double n = l2_norm(m.row(r));
        out.norms[r] = n;
        if (n < floor || n == 0.0) {
            out.degenerate[r] = true;
            continue;
        }
        for (double& v : out.normalized.row(r)) {
            v /= n;
        }
    }
    return out;
}

LayerVectors global_normalize(const LayerVectors& grads) {
    double sq = 0.0;
    for (const auto& g : grads) {
        sq += dot(g, g);
    }
    if (!(sq > 0.0)) {
        throw DegenerateGradient("global_normalize: gradient is identically zero");
    }
    const double norm = std::sqrt(sq);
    LayerVectors out = grads;
    for (auto& g : out) {
        for (double& v : g) {
            v /= norm;
        }
    }
    return out;
}

}  // namespace locas
