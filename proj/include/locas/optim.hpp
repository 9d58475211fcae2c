// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "locas/tensor.hpp"

namespace locas {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view to_string(OptimizerKind kind);

// First-order optimizer over a fixed list of tensors. Adam moments are
// allocated lazily on the first step and reset if the shapes change (the
// memory width can change between steps).
class Optimizer {
public:
    explicit Optimizer(OptimizerKind kind, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : kind_(kind), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, double lr);
    void reset();

    OptimizerKind kind() const { return kind_; }
    long steps() const { return t_; }

private:
    OptimizerKind kind_;
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

}  // namespace locas
