// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "locas/tensor.hpp"

namespace locas {

struct SymmetricEigen {
    // Column j is the unit eigenvector for values[j].
    Matrix vectors;
    // Descending; equal values keep their original diagonal order.
    Vector values;
    int sweeps = 0;
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix.
//
// Each eigenvector's sign is fixed so that its largest-magnitude component is
// positive, which makes the output a deterministic function of the input.
// Throws ShapeError if `s` is not square or is asymmetric beyond
// tol·max(1, ‖s‖_F), and NumericalError if the sweeps fail to converge.
SymmetricEigen symmetric_evd(const Matrix& s, double tol = 1e-12, int max_sweeps = 100);

}  // namespace locas
