// SPDX-License-Identifier: Apache-2.0
#include "locas/eigen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "locas/errors.hpp"

namespace locas {

namespace {

double off_diagonal_sq(const Matrix& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            if (i != j) {
                s += a(i, j) * a(i, j);
            }
        }
    }
    return s;
}

// Applies the rotation that annihilates a(p,q) to both a and the
// accumulated eigenvector matrix v.
void rotate(Matrix& a, Matrix& v, std::size_t p, std::size_t q) {
    const double apq = a(p, q);
    const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
    const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
    const double c = 1.0 / std::sqrt(t * t + 1.0);
    const double s = t * c;
    const std::size_t n = a.rows();
    for (std::size_t k = 0; k < n; ++k) {
        const double akp = a(k, p);
        const double akq = a(k, q);
        a(k, p) = c * akp - s * akq;
        a(k, q) = s * akp + c * akq;
    }
    for (std::size_t k = 0; k < n; ++k) {
        const double apk = a(p, k);
        const double aqk = a(q, k);
        a(p, k) = c * apk - s * aqk;
        a(q, k) = s * apk + c * aqk;
    }
    a(p, q) = 0.0;
    a(q, p) = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double vkp = v(k, p);
        const double vkq = v(k, q);
        v(k, p) = c * vkp - s * vkq;
        v(k, q) = s * vkp + c * vkq;
    }
}

}  // namespace

SymmetricEigen symmetric_evd(const Matrix& s, double tol, int max_sweeps) {
    if (s.rows() != s.cols()) {
        throw ShapeError("symmetric_evd: matrix is " + std::to_string(s.rows()) + "x" +
                         std::to_string(s.cols()) + ", not square");
    }
    require_finite(s.data(), "symmetric_evd input");
    const std::size_t n = s.rows();
    const double frob = frobenius_norm(s);
    const double sym_bound = tol * std::max(1.0, frob);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (std::abs(s(i, j) - s(j, i)) > sym_bound) {
                throw ShapeError("symmetric_evd: matrix is not symmetric at (" +
                                 std::to_string(i) + "," + std::to_string(j) + ")");
            }
        }
    }

    // Work on the exactly symmetrized copy.
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            a(i, j) = 0.5 * (s(i, j) + s(j, i));
        }
    }
    Matrix v = Matrix::identity(n);

    const double target = 1e-15 * frob;
    int sweep = 0;
    while (std::sqrt(off_diagonal_sq(a)) > target) {
        if (sweep == max_sweeps) {
            throw NumericalError("symmetric_evd: no convergence after " +
                                 std::to_string(max_sweeps) + " sweeps");
        }
        ++sweep;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (apq == 0.0) {
                    continue;
                }
                // Skip elements already negligible against both diagonals.
                const double small = 1e-300 + 1e-18 * (std::abs(a(p, p)) + std::abs(a(q, q)));
                if (std::abs(apq) < small && sweep > 4) {
                    a(p, q) = 0.0;
                    a(q, p) = 0.0;
                    continue;
                }
                rotate(a, v, p, q);
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    SymmetricEigen out{Matrix(n, n), Vector(n), sweep};
    for (std::size_t j = 0; j < n; ++j) {
        const std::size_t src = order[j];
        out.values[j] = a(src, src);
        std::size_t pivot = 0;
        for (std::size_t k = 1; k < n; ++k) {
            if (std::abs(v(k, src)) > std::abs(v(pivot, src))) {
                pivot = k;
            }
        }
        const double sign = v(pivot, src) < 0.0 ? -1.0 : 1.0;
        for (std::size_t k = 0; k < n; ++k) {
            out.vectors(k, j) = sign * v(k, src);
        }
    }
    return out;
}

}  // namespace locas
