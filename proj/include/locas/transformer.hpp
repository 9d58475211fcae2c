// SPDX-License-Identifier: Apache-2.0
//
// Forward pass with activation capture and exact reverse-mode gradients for
// the tiny backbone plus any attached memory / adapter.
//
// Layer i computes (pre-norm, no biases):
//   a   = x + Attn(RMSNorm(x))
//   A_i = RMSNorm(a)                         FFN input, captured in the trace
//   H_i = a + FFN(A_i) + Δ_i(A_i)            layer hidden output
// where Δ_i is the sideway memory output (τ-scaled for the GLU variant).
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "locas/attachments.hpp"
#include "locas/model.hpp"

namespace locas {

// Optional modules evaluated together with the backbone. All pointers are
// borrowed and must outlive any ForwardPass built from them.
struct Attachments {
    const MlpMemory* mlp_memory = nullptr;
    const GluMemory* glu_memory = nullptr;
    const LowRankAdapter* adapter = nullptr;
    // Per-layer additive offsets (T×d) applied to the hidden output H_i.
    // Their gradient is exactly ∂/∂H_i, which the tests use as a probe.
    const std::vector<Matrix>* hidden_offsets = nullptr;
};

struct ActivationTrace {
    // Per layer, T×d: the FFN input A_i at every position.
    std::vector<Matrix> ffn_input;
    // Per layer, T×m: the backbone FFN intermediate activation.
    // For the GLU this is M = σ(W_G A) ⊙ (W_K A); for the MLP, ReLU(W_K A).
    std::vector<Matrix> ffn_intermediate;
};

namespace detail {

struct LinearCache {
    Matrix down_out;  // x·downᵀ when an adapter is attached
};

struct LayerCache {
    Matrix x_in;          // residual stream entering the layer
    Vector attn_inv_rms;
    Matrix attn_normed;
    Matrix q, k, v;       // q and k after rotary encoding
    std::vector<Matrix> probs;  // per head, T×T causal attention weights
    Matrix attn_out;      // concatenated head outputs before wo
    Matrix x_mid;         // residual after attention
    Vector ffn_inv_rms;
    Matrix ffn_key_pre;   // A·W_Kᵀ
    Matrix ffn_gate_pre;  // A·W_Gᵀ (GLU)
    Matrix mem_key_pre;
    Matrix mem_gate_pre;
    Matrix mem_hidden;    // memory intermediate activation
    LinearCache q_ad, k_ad, v_ad, o_ad, gate_ad, key_ad, value_ad;
};

}  // namespace detail

// Logits plus everything the backward pass needs.
struct ForwardResult {
    Matrix logits;  // T×vocab
    ActivationTrace trace;
    std::vector<int> tokens;
    std::vector<detail::LayerCache> layers;
    Matrix final_input;
    Vector final_inv_rms;
    Matrix final_normed;

    std::size_t length() const { return tokens.size(); }
};

// Causal forward over `tokens`. Row t of the logits scores token t+1.
// Throws ShapeError if the length exceeds max_seq or a token id is out of
// range.
ForwardResult forward(const Backbone& backbone, std::span<const int> tokens,
                      const Attachments& attachments = {});

struct GradientRequest {
    bool backbone = false;
    bool memory = false;
    bool adapter = false;
    bool hidden = false;
};

struct Gradients {
    std::optional<BackboneWeights> backbone;
    std::optional<MlpMemory> mlp_memory;
    std::optional<GluMemory> glu_memory;
    std::optional<LowRankAdapter> adapter;
    // Per layer, T×d: gradient w.r.t. the hidden output H_i.
    std::vector<Matrix> hidden;
};

// Reverse-mode pass for the scalar whose gradient w.r.t. the logits is
// `dlogits`. The backbone and attachments must be the ones used to build
// `pass` and must not have changed since.
Gradients backward(const Backbone& backbone, const Attachments& attachments,
                   const ForwardResult& pass, const Matrix& dlogits, GradientRequest request);

// -------------------------------------------------------------------- loss

// Per-row negative log-likelihood; rows with target < 0 yield 0.
Vector position_nll(const Matrix& logits, std::span<const int> targets);

// Mean NLL (nats/token) over rows with target >= 0. Returns 0 if none.
double lm_loss(const Matrix& logits, std::span<const int> targets);

// Gradient of Σ_t weight·NLL_t w.r.t. the logits, i.e. weight·(softmax − onehot)
// on rows with a target and zero elsewhere.
Matrix nll_gradient(const Matrix& logits, std::span<const int> targets, double weight);

// Next-token targets for a window: targets[t] = tokens[t+1] for t >= first,
// −1 before `first` and at the last position.
std::vector<int> shifted_targets(std::span<const int> tokens, std::size_t first = 0);

// ∇_{H_i} log p(x_{t+1} | x_{≤t}) at position t for every layer i: one row
// of the GradientTrace. `tokens` must contain position t+1.
LayerVectors log_likelihood_hidden_grads(const Backbone& backbone, std::span<const int> tokens,
                                         std::size_t position, const Attachments& attachments = {});

}  // namespace locas
