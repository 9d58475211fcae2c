// SPDX-License-Identifier: Apache-2.0
#include "locas/optim.hpp"

#include <cmath>
#include <string>

#include "locas/errors.hpp"

namespace locas {

OptimizerKind parse_optimizer(std::string_view name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd|adam)");
}

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

void Optimizer::reset() {
    t_ = 0;
    m_.clear();
    v_.clear();
}

void Optimizer::step(std::span<Matrix* const> params, std::span<const Matrix* const> grads, double lr) {
    if (params.size() != grads.size()) {
        throw ShapeError("optimizer: parameter/gradient count mismatch");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i]->size() != grads[i]->size()) {
            throw ShapeError("optimizer: parameter/gradient shape mismatch");
        }
    }
    if (kind_ == OptimizerKind::sgd) {
        ++t_;
        for (std::size_t i = 0; i < params.size(); ++i) {
            add_scaled_inplace(*params[i], *grads[i], -lr);
        }
        return;
    }

    bool fresh = m_.size() != params.size();
    for (std::size_t i = 0; !fresh && i < params.size(); ++i) {
        fresh = m_[i].rows() != params[i]->rows() || m_[i].cols() != params[i]->cols();
    }
    if (fresh) {
        reset();
        for (const Matrix* p : params) {
            m_.emplace_back(p->rows(), p->cols());
            v_.emplace_back(p->rows(), p->cols());
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i]->data();
        const auto& g = grads[i]->data();
        auto& m = m_[i].data();
        auto& v = v_[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
            v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
            p[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
        }
    }
}

}  // namespace locas
