// SPDX-License-Identifier: Apache-2.0
//
// Tiny decoder-only transformer: configuration, parameter tensors and the
// byte-level vocabulary.
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "locas/tensor.hpp"

namespace locas {

enum class FfnKind { mlp, glu };

FfnKind parse_ffn_kind(std::string_view name);
std::string_view to_string(FfnKind kind);

// Byte-level vocabulary: ids 0..255 are raw bytes, then two specials.
inline constexpr int kBosToken = 256;
inline constexpr int kEosToken = 257;
inline constexpr int kByteVocab = 258;

std::vector<int> encode_bytes(std::string_view text, bool prepend_bos = false);
std::string decode_bytes(std::span<const int> tokens);

struct ModelConfig {
    int layers = 2;          // L
    int hidden = 64;         // d
    int intermediate = 256;  // m
    int heads = 4;
    int vocab = kByteVocab;
    FfnKind ffn_kind = FfnKind::mlp;
    int max_seq = 512;
    double rope_base = 10000.0;
    double norm_eps = 1e-6;

    int head_dim() const { return hidden / heads; }
    // Throws ConfigError describing the first violated constraint.
    void validate() const;

    // Desk-scale defaults: m=256 for the ReLU MLP, 192 for the GLU.
    static ModelConfig desk_default(FfnKind kind);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
    Matrix attn_norm;  // 1×d
    Matrix wq, wk, wv, wo;  // d×d, stored out×in
    Matrix ffn_norm;   // 1×d
    Matrix w_gate;     // m×d, GLU only (empty for the MLP)
    Matrix w_key;      // m×d, row j is the key k_j
    Matrix w_value;    // m×d, row j is the value v_j (the down projection)
};

struct BackboneWeights {
    Matrix embedding;  // vocab×d
    std::vector<LayerWeights> layers;
    Matrix final_norm;  // 1×d
    Matrix head;        // vocab×d

    friend bool operator==(const BackboneWeights& a, const BackboneWeights& b);
};

struct Backbone {
    ModelConfig config;
    BackboneWeights weights;
};

// Randomly initialized weights (fan-in scaled normals, unit norm gains).
Backbone init_backbone(const ModelConfig& config, std::uint64_t seed);

// All-zero tensors with the shapes `config` implies; used for gradients.
BackboneWeights zeros_like(const ModelConfig& config);

// Visits every tensor in declaration order with its checkpoint name.
// Empty tensors (the MLP's gate) are skipped.
void for_each_tensor(BackboneWeights& w, const std::function<void(const std::string&, Matrix&)>& fn);
void for_each_tensor(const BackboneWeights& w,
                     const std::function<void(const std::string&, const Matrix&)>& fn);

std::size_t parameter_total(const BackboneWeights& w);

// Order-sensitive FNV-1a hash over the raw bytes of every tensor.
std::uint64_t checksum(const BackboneWeights& w);

}  // namespace locas
