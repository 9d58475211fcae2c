// SPDX-License-Identifier: Apache-2.0
//
// Sideway parametric memory: Locas-MLP (V^T·ReLU(K^T A)) and Locas-GLU
// (V^T·(SiLU(G^T A) ⊙ K^T A)), their initializations, norm clipping, output
// scaling and gradient-descent updates on the language-modeling loss.
#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "locas/attachments.hpp"
#include "locas/optim.hpp"
#include "locas/transformer.hpp"

namespace locas {

enum class InitStrategy { topk, bottomk, random_selection, gaussian, normalized_activation };

InitStrategy parse_init_strategy(std::string_view name);
std::string_view to_string(InitStrategy s);

// Empty memories (r = 0) attached to every layer of `config`.
MlpMemory empty_mlp_memory(const ModelConfig& config, double epsilon = 1e-2);
GluMemory empty_glu_memory(const ModelConfig& config);

// ------------------------------------------------------------------ forward

// Vᵀ·ReLU(Kᵀa); zero when r = 0. Throws ShapeError if dim(a) != d.
Vector mlp_forward(const MlpMemoryLayer& layer, std::span<const double> a);
// Vᵀ·(SiLU(Gᵀa) ⊙ Kᵀa), before the τ scale.
Vector glu_forward(const GluMemoryLayer& layer, std::span<const double> a);

// Backbone forward with the memory attached (GLU output scaled by τ).
ForwardResult combined_forward(const Backbone& backbone, const GluMemory& memory, std::span<const int> tokens);
ForwardResult combined_forward(const Backbone& backbone, const MlpMemory& memory, std::span<const int> tokens);

// ----------------------------------------------------------- Locas-MLP init

// Appends one slot per layer from a memorized token: key = A_i/‖A_i‖,
// value = ε·GlobalNormalize(G)_i, with G the hidden-output gradient of
// log p at that token across all layers. Atomic: on error nothing changes.
// Throws DegenerateActivation for a zero A_i and DegenerateGradient for an
// all-zero G.
void mlp_append_slot(MlpMemory& memory, const LayerVectors& activations, const LayerVectors& grads);

// ----------------------------------------------------------- Locas-GLU init

// α_j = mean_t |M_tj| over the rows of a T×m intermediate trace.
Vector activation_importance(const Matrix& intermediate);

// Backbone FFN dimensions to clone. topk/bottomk break ties toward the
// smaller index; random-selection samples without replacement.
std::vector<std::size_t> select_dimensions(std::span<const double> importance, std::size_t r,
                                           InitStrategy strategy, std::uint64_t seed);

// τ = (1/r)·mean_j ‖W_down[j,:]‖₂. Throws CapacityError for r = 0.
double output_scale(const Matrix& w_down, std::size_t r);

// One layer's memory for the cloning strategies and the gaussian baseline.
// Cloned gate/key rows are normalized to unit norm; values start at zero.
// Throws CapacityError if r exceeds the backbone width m, and ShapeError if
// a cloning strategy is used on a backbone without a gate.
GluMemoryLayer glu_init_from_backbone(const LayerWeights& ffn, std::span<const double> importance, std::size_t r,
                                      InitStrategy strategy, std::uint64_t seed);

// The normalized-activation ablation: gate and key rows are the normalized
// FFN inputs of r memorized tokens, values follow the Locas-MLP rule.
// `activations[k]` and `grads[k]` are the per-layer vectors of token k.
GluMemory glu_init_from_activations(const Backbone& backbone, const std::vector<LayerVectors>& activations,
                                    const std::vector<LayerVectors>& grads, double epsilon);

// -------------------------------------------------------------- constraints

// w ← w / max(‖w‖₂, 1) for every gate/key/value slot row. Returns the
// number of rows rescaled.
std::size_t clip_weight_norms(GluMemory& memory);
std::size_t clip_weight_norms(MlpMemory& memory);

// Largest slot-row norm across the memory; 0 when empty.
double max_slot_norm(const GluMemory& memory);
double max_slot_norm(const MlpMemory& memory);

// ------------------------------------------------------------------ updates

std::vector<Matrix*> parameters(GluMemory& memory);
std::vector<Matrix*> parameters(MlpMemory& memory);
std::vector<const Matrix*> parameters(const GluMemory& memory);
std::vector<const Matrix*> parameters(const MlpMemory& memory);

struct MemoryUpdateOptions {
    double lr = 4e-3;
    int steps = 1;
    OptimizerKind optimizer = OptimizerKind::sgd;
};

// Applies one optimizer step on the memory from an existing forward pass
// (built with this memory attached), then clips. The objective is the chunk
// NLL summed over rows of `targets` that are >= 0. Returns the mean NLL.
double memory_update_from_pass(const Backbone& backbone, GluMemory& memory, const ForwardResult& pass,
                               std::span<const int> targets, Optimizer& optimizer, double lr);
double memory_update_from_pass(const Backbone& backbone, MlpMemory& memory, const ForwardResult& pass,
                               std::span<const int> targets, Optimizer& optimizer, double lr);

// `steps` rounds of forward → backward → update → clip on one chunk. Only
// memory parameters change. Returns the pre-update loss of every step.
// Throws NumericalError on a non-finite loss.
Vector memory_grad_step(const Backbone& backbone, GluMemory& memory, std::span<const int> tokens,
                        std::span<const int> targets, const MemoryUpdateOptions& options, Optimizer* optimizer = nullptr);
Vector memory_grad_step(const Backbone& backbone, MlpMemory& memory, std::span<const int> tokens,
                        std::span<const int> targets, const MemoryUpdateOptions& options, Optimizer* optimizer = nullptr);

}  // namespace locas
