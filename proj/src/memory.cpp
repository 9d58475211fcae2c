// SPDX-License-Identifier: Apache-2.0
#include "locas/memory.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "locas/errors.hpp"

namespace locas {

InitStrategy parse_init_strategy(std::string_view name) {
    if (name == "topk") return InitStrategy::topk;
    if (name == "bottomk") return InitStrategy::bottomk;
    if (name == "random-selection") return InitStrategy::random_selection;
    if (name == "gaussian") return InitStrategy::gaussian;
    if (name == "normalized-activation") return InitStrategy::normalized_activation;
    throw ConfigError("unknown init strategy '" + std::string(name) +
                      "' (expected topk|bottomk|random-selection|gaussian|normalized-activation)");
}

std::string_view to_string(InitStrategy s) {
    switch (s) {
        case InitStrategy::topk: return "topk";
        case InitStrategy::bottomk: return "bottomk";
        case InitStrategy::random_selection: return "random-selection";
        case InitStrategy::gaussian: return "gaussian";
        case InitStrategy::normalized_activation: return "normalized-activation";
    }
    return "?";
}

MlpMemory empty_mlp_memory(const ModelConfig& config, double epsilon) {
    MlpMemory m;
    m.epsilon = epsilon;
    const auto d = static_cast<std::size_t>(config.hidden);
    m.layers.assign(static_cast<std::size_t>(config.layers), MlpMemoryLayer{Matrix(0, d), Matrix(0, d)});
    return m;
}

GluMemory empty_glu_memory(const ModelConfig& config) {
    GluMemory m;
    const auto d = static_cast<std::size_t>(config.hidden);
    m.layers.assign(static_cast<std::size_t>(config.layers), GluMemoryLayer{Matrix(0, d), Matrix(0, d), Matrix(0, d), 0.0, {}});
    return m;
}

// ------------------------------------------------------------------ forward

namespace {

void check_width(std::size_t got, std::size_t key_cols, std::size_t width) {
    if (width > 0 && got != key_cols) {
        throw ShapeError("memory forward: input has dimension " + std::to_string(got) + ", memory expects " +
                         std::to_string(key_cols));
    }
}

}  // namespace

Vector mlp_forward(const MlpMemoryLayer& layer, std::span<const double> a) {
    check_width(a.size(), layer.key.cols(), layer.width());
    Vector out(layer.width() > 0 ? layer.value.cols() : a.size(), 0.0);
    for (std::size_t j = 0; j < layer.width(); ++j) {
        const double gate = dot(a, layer.key.row(j));
        if (gate <= 0.0) {
            continue;
        }
        const auto v = layer.value.row(j);
        for (std::size_t c = 0; c < out.size(); ++c) {
            out[c] += gate * v[c];
        }
    }
    return out;
}

Vector glu_forward(const GluMemoryLayer& layer, std::span<const double> a) {
    check_width(a.size(), layer.key.cols(), layer.width());
    Vector out(layer.width() > 0 ? layer.value.cols() : a.size(), 0.0);
    for (std::size_t j = 0; j < layer.width(); ++j) {
        const double h = activate(ActivationKind::silu, dot(a, layer.gate.row(j))) * dot(a, layer.key.row(j));
        const auto v = layer.value.row(j);
        for (std::size_t c = 0; c < out.size(); ++c) {
            out[c] += h * v[c];
        }
    }
    return out;
}

ForwardResult combined_forward(const Backbone& backbone, const GluMemory& memory, std::span<const int> tokens) {
    Attachments att;
    att.glu_memory = &memory;
    return forward(backbone, tokens, att);
}

ForwardResult combined_forward(const Backbone& backbone, const MlpMemory& memory, std::span<const int> tokens) {
    Attachments att;
    att.mlp_memory = &memory;
    return forward(backbone, tokens, att);
}

// ----------------------------------------------------------- Locas-MLP init

void mlp_append_slot(MlpMemory& memory, const LayerVectors& activations, const LayerVectors& grads) {
    if (activations.size() != memory.layers.size() || grads.size() != memory.layers.size()) {
        throw ShapeError("mlp_append_slot: expected one activation and one gradient per layer");
    }
    const LayerVectors direction = global_normalize(grads);
    LayerVectors keys;
    for (std::size_t i = 0; i < activations.size(); ++i) {
        const double n = l2_norm(activations[i]);
        if (!(n > 0.0)) {
            throw DegenerateActivation("mlp_append_slot: FFN input at layer " + std::to_string(i) + " is zero");
        }
        if (activations[i].size() != grads[i].size()) {
            throw ShapeError("mlp_append_slot: activation and gradient widths differ");
        }
        Vector k = activations[i];
        for (double& v : k) v /= n;
        keys.push_back(std::move(k));
    }
    for (std::size_t i = 0; i < memory.layers.size(); ++i) {
        Vector v = direction[i];
        for (double& x : v) x *= memory.epsilon;
        memory.layers[i].key.append_row(keys[i]);
        memory.layers[i].value.append_row(v);
    }
}

// ----------------------------------------------------------- Locas-GLU init

Vector activation_importance(const Matrix& intermediate) {
    if (intermediate.rows() == 0) {
        throw ShapeError("activation_importance: no tokens");
    }
    Vector alpha(intermediate.cols(), 0.0);
    for (std::size_t t = 0; t < intermediate.rows(); ++t) {
        const auto row = intermediate.row(t);
        for (std::size_t j = 0; j < alpha.size(); ++j) {
            alpha[j] += std::abs(row[j]);
        }
    }
    for (double& a : alpha) a /= static_cast<double>(intermediate.rows());
    return alpha;
}

std::vector<std::size_t> select_dimensions(std::span<const double> importance, std::size_t r, InitStrategy strategy,
                                           std::uint64_t seed) {
    const std::size_t m = importance.size();
    if (r > m) {
        throw CapacityError("cannot select " + std::to_string(r) + " of " + std::to_string(m) + " FFN dimensions");
    }
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    switch (strategy) {
        case InitStrategy::topk:
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
            break;
        case InitStrategy::bottomk:
            std::stable_sort(order.begin(), order.end(),
                             [&](std::size_t a, std::size_t b) { return importance[a] < importance[b]; });
            break;
        case InitStrategy::random_selection: {
            std::mt19937_64 rng(seed);
            std::shuffle(order.begin(), order.end(), rng);
            break;
        }
        default:
            throw ConfigError("select_dimensions: strategy '" + std::string(to_string(strategy)) +
                              "' does not clone backbone dimensions");
    }
    order.resize(r);
    std::sort(order.begin(), order.end());
    return order;
}

double output_scale(const Matrix& w_down, std::size_t r) {
    if (r == 0) {
        throw CapacityError("output_scale: memory width must be >= 1");
    }
    if (w_down.rows() == 0) {
        throw ShapeError("output_scale: empty down projection");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < w_down.rows(); ++j) {
        sum += l2_norm(w_down.row(j));
    }
    return (sum / static_cast<double>(w_down.rows())) / static_cast<double>(r);
}

GluMemoryLayer glu_init_from_backbone(const LayerWeights& ffn, std::span<const double> importance, std::size_t r,
                                      InitStrategy strategy, std::uint64_t seed) {
    const std::size_t m = ffn.w_key.rows();
    const std::size_t d = ffn.w_key.cols();
    if (r > m) {
        throw CapacityError("memory width " + std::to_string(r) + " exceeds backbone FFN width " + std::to_string(m));
    }
    GluMemoryLayer layer;
    layer.value = Matrix(r, d);
    layer.tau = output_scale(ffn.w_value, r);
    if (strategy == InitStrategy::gaussian) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
        layer.gate = Matrix(r, d);
        layer.key = Matrix(r, d);
        for (double& v : layer.gate.data()) v = dist(rng);
        for (double& v : layer.key.data()) v = dist(rng);
        return layer;
    }
    if (strategy == InitStrategy::normalized_activation) {
        throw ConfigError("glu_init_from_backbone: normalized-activation needs activations; "
                          "use glu_init_from_activations");
    }
    if (ffn.w_gate.empty()) {
        throw ShapeError("glu_init_from_backbone: cloning requires a GLU backbone");
    }
    if (importance.size() != m) {
        throw ShapeError("glu_init_from_backbone: importance has " + std::to_string(importance.size()) +
                         " entries, backbone FFN has " + std::to_string(m));
    }
    layer.selection = select_dimensions(importance, r, strategy, seed);
    layer.gate = normalize_rows(ffn.w_gate.select_rows(layer.selection), 0.0).normalized;
    layer.key = normalize_rows(ffn.w_key.select_rows(layer.selection), 0.0).normalized;
    return layer;
}

GluMemory glu_init_from_activations(const Backbone& backbone, const std::vector<LayerVectors>& activations,
                                    const std::vector<LayerVectors>& grads, double epsilon) {
    if (activations.size() != grads.size()) {
        throw ShapeError("glu_init_from_activations: activation/gradient token counts differ");
    }
    const std::size_t r = activations.size();
    const auto m = static_cast<std::size_t>(backbone.config.intermediate);
    if (r > m) {
        throw CapacityError("memory width " + std::to_string(r) + " exceeds backbone FFN width " + std::to_string(m));
    }
    GluMemory mem = empty_glu_memory(backbone.config);
    for (std::size_t k = 0; k < r; ++k) {
        // Reuse the Locas-MLP slot rule, then copy the key into the gate.
        MlpMemory slot = empty_mlp_memory(backbone.config, epsilon);
        mlp_append_slot(slot, activations[k], grads[k]);
        for (std::size_t i = 0; i < mem.layers.size(); ++i) {
            mem.layers[i].gate.append_row(slot.layers[i].key.row(0));
            mem.layers[i].key.append_row(slot.layers[i].key.row(0));
            mem.layers[i].value.append_row(slot.layers[i].value.row(0));
        }
    }
    for (std::size_t i = 0; i < mem.layers.size(); ++i) {
        mem.layers[i].tau = r == 0 ? 0.0 : output_scale(backbone.weights.layers[i].w_value, r);
    }
    return mem;
}

// -------------------------------------------------------------- constraints

namespace {

// Rows normalized to unit length can land a few ulps above 1; leaving them
// alone keeps clipping idempotent and lr = 0 updates exact no-ops.
constexpr double kClipSlack = 1e-12;

std::size_t clip_rows(Matrix& m) {
    std::size_t clipped = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double n = l2_norm(row);
        if (n > 1.0 + kClipSlack) {
            for (double& v : row) v /= n;
            ++clipped;
        }
    }
    return clipped;
}

double max_row_norm(const Matrix& m) {
    double best = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r) best = std::max(best, l2_norm(m.row(r)));
    return best;
}

}  // namespace

std::size_t clip_weight_norms(GluMemory& memory) {
    std::size_t n = 0;
    for (auto& l : memory.layers) n += clip_rows(l.gate) + clip_rows(l.key) + clip_rows(l.value);
    return n;
}

std::size_t clip_weight_norms(MlpMemory& memory) {
    std::size_t n = 0;
    for (auto& l : memory.layers) n += clip_rows(l.key) + clip_rows(l.value);
    return n;
}

double max_slot_norm(const GluMemory& memory) {
    double best = 0.0;
    for (const auto& l : memory.layers)
        best = std::max({best, max_row_norm(l.gate), max_row_norm(l.key), max_row_norm(l.value)});
    return best;
}

double max_slot_norm(const MlpMemory& memory) {
    double best = 0.0;
    for (const auto& l : memory.layers) best = std::max({best, max_row_norm(l.key), max_row_norm(l.value)});
    return best;
}

// ------------------------------------------------------------------ updates

std::vector<Matrix*> parameters(GluMemory& memory) {
    std::vector<Matrix*> out;
    for (auto& l : memory.layers) {
        out.push_back(&l.gate);
        out.push_back(&l.key);
        out.push_back(&l.value);
    }
    return out;
}

std::vector<Matrix*> parameters(MlpMemory& memory) {
    std::vector<Matrix*> out;
    for (auto& l : memory.layers) {
        out.push_back(&l.key);
        out.push_back(&l.value);
    }
    return out;
}

std::vector<const Matrix*> parameters(const GluMemory& memory) {
    std::vector<const Matrix*> out;
    for (const auto& l : memory.layers) {
        out.push_back(&l.gate);
        out.push_back(&l.key);
        out.push_back(&l.value);
    }
    return out;
}

std::vector<const Matrix*> parameters(const MlpMemory& memory) {
    std::vector<const Matrix*> out;
    for (const auto& l : memory.layers) {
        out.push_back(&l.key);
        out.push_back(&l.value);
    }
    return out;
}

namespace {

std::size_t count_targets(std::span<const int> targets) {
    return static_cast<std::size_t>(std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; }));
}

template <class Memory>
double update_from_pass(const Backbone& backbone, Memory& memory, const ForwardResult& pass,
                        std::span<const int> targets, Optimizer& optimizer, double lr) {
    const double loss = lm_loss(pass.logits, targets);
    if (!std::isfinite(loss)) {
        throw NumericalError("memory update: non-finite chunk loss");
    }
    if (count_targets(targets) == 0 || memory.width() == 0) {
        return loss;
    }
    Attachments att;
    if constexpr (std::is_same_v<Memory, GluMemory>) {
        att.glu_memory = &memory;
    } else {
        att.mlp_memory = &memory;
    }
    const Matrix dlogits = nll_gradient(pass.logits, targets, 1.0);
    Gradients g = backward(backbone, att, pass, dlogits, {.memory = true});
    std::vector<const Matrix*> grads;
    if constexpr (std::is_same_v<Memory, GluMemory>) {
        grads = parameters(std::as_const(*g.glu_memory));
    } else {
        grads = parameters(std::as_const(*g.mlp_memory));
    }
    optimizer.step(parameters(memory), grads, lr);
    clip_weight_norms(memory);
    return loss;
}

template <class Memory>
Vector grad_steps(const Backbone& backbone, Memory& memory, std::span<const int> tokens, std::span<const int> targets,
                  const MemoryUpdateOptions& options, Optimizer* optimizer) {
    if (options.steps < 1) {
        throw ConfigError("memory_grad_step: steps must be >= 1");
    }
    Optimizer local(options.optimizer);
    Optimizer& opt = optimizer != nullptr ? *optimizer : local;
    Vector history;
    for (int s = 0; s < options.steps; ++s) {
        const ForwardResult pass = combined_forward(backbone, memory, tokens);
        history.push_back(update_from_pass(backbone, memory, pass, targets, opt, options.lr));
    }
    return history;
}

}  // namespace

double memory_update_from_pass(const Backbone& backbone, GluMemory& memory, const ForwardResult& pass,
                               std::span<const int> targets, Optimizer& optimizer, double lr) {
    return update_from_pass(backbone, memory, pass, targets, optimizer, lr);
}

double memory_update_from_pass(const Backbone& backbone, MlpMemory& memory, const ForwardResult& pass,
                               std::span<const int> targets, Optimizer& optimizer, double lr) {
    return update_from_pass(backbone, memory, pass, targets, optimizer, lr);
}

Vector memory_grad_step(const Backbone& backbone, GluMemory& memory, std::span<const int> tokens,
                        std::span<const int> targets, const MemoryUpdateOptions& options, Optimizer* optimizer) {
    return grad_steps(backbone, memory, tokens, targets, options, optimizer);
}

Vector memory_grad_step(const Backbone& backbone, MlpMemory& memory, std::span<const int> tokens,
                        std::span<const int> targets, const MemoryUpdateOptions& options, Optimizer* optimizer) {
    return grad_steps(backbone, memory, tokens, targets, options, optimizer);
}

}  // namespace locas
