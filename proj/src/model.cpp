// SPDX-License-Identifier: Apache-2.0
#include "locas/model.hpp"

#include <cmath>
#include <cstring>
#include <random>

#include "locas/errors.hpp"

namespace locas {

FfnKind parse_ffn_kind(std::string_view name) {
    if (name == "mlp") return FfnKind::mlp;
    if (name == "glu") return FfnKind::glu;
    throw ConfigError("unknown ffn kind '" + std::string(name) + "' (expected mlp|glu)");
}

std::string_view to_string(FfnKind kind) { return kind == FfnKind::mlp ? "mlp" : "glu"; }

std::vector<int> encode_bytes(std::string_view text, bool prepend_bos) {
    std::vector<int> out;
    out.reserve(text.size() + 1);
    if (prepend_bos) {
        out.push_back(kBosToken);
    }
    for (unsigned char c : text) {
        out.push_back(static_cast<int>(c));
    }
    return out;
}

std::string decode_bytes(std::span<const int> tokens) {
    std::string out;
    for (int t : tokens) {
        if (t >= 0 && t < 256) {
            out.push_back(static_cast<char>(t));
        }
    }
    return out;
}

void ModelConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
    if (layers < 1) fail("layers must be >= 1");
    if (hidden < 1) fail("hidden must be >= 1");
    if (intermediate < 1) fail("intermediate must be >= 1");
    if (heads < 1 || hidden % heads != 0) fail("hidden must be divisible by heads");
    if (head_dim() % 2 != 0) fail("head dimension must be even for rotary encoding");
    if (vocab < 1) fail("vocab must be >= 1");
    if (max_seq < 1) fail("max_seq must be >= 1");
}

ModelConfig ModelConfig::desk_default(FfnKind kind) {
    ModelConfig c;
    c.ffn_kind = kind;
    c.intermediate = kind == FfnKind::mlp ? 256 : 192;
    return c;
}

bool operator==(const BackboneWeights& a, const BackboneWeights& b) {
    if (a.layers.size() != b.layers.size()) {
        return false;
    }
    std::vector<const Matrix*> lhs;
    std::vector<const Matrix*> rhs;
    for_each_tensor(a, [&](const std::string&, const Matrix& m) { lhs.push_back(&m); });
    for_each_tensor(b, [&](const std::string&, const Matrix& m) { rhs.push_back(&m); });
    if (lhs.size() != rhs.size()) {
        return false;
    }
    for (std::size_t i = 0; i < lhs.size(); ++i) {
        if (!(*lhs[i] == *rhs[i])) {
            return false;
        }
    }
    return true;
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (double& v : m.data()) {
        v = dist(rng);
    }
    return m;
}

template <class W, class Fn>
void visit(W& w, Fn&& fn) {
    fn(std::string("embedding"), w.embedding);
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        auto& l = w.layers[i];
        const std::string p = "layer" + std::to_string(i) + ".";
        fn(p + "attn_norm", l.attn_norm);
        fn(p + "wq", l.wq);
        fn(p + "wk", l.wk);
        fn(p + "wv", l.wv);
        fn(p + "wo", l.wo);
        fn(p + "ffn_norm", l.ffn_norm);
        if (!l.w_gate.empty()) {
            fn(p + "w_gate", l.w_gate);
        }
        fn(p + "w_key", l.w_key);
        fn(p + "w_value", l.w_value);
    }
    fn(std::string("final_norm"), w.final_norm);
    fn(std::string("head"), w.head);
}

}  // namespace

void for_each_tensor(BackboneWeights& w, const std::function<void(const std::string&, Matrix&)>& fn) {
    visit(w, fn);
}

void for_each_tensor(const BackboneWeights& w,
                     const std::function<void(const std::string&, const Matrix&)>& fn) {
    visit(w, fn);
}

BackboneWeights zeros_like(const ModelConfig& config) {
    const auto d = static_cast<std::size_t>(config.hidden);
    const auto m = static_cast<std::size_t>(config.intermediate);
    const auto v = static_cast<std::size_t>(config.vocab);
    BackboneWeights w;
    w.embedding = Matrix(v, d);
    w.layers.resize(static_cast<std::size_t>(config.layers));
    for (auto& l : w.layers) {
        l.attn_norm = Matrix(1, d);
        l.wq = Matrix(d, d);
        l.wk = Matrix(d, d);
        l.wv = Matrix(d, d);
        l.wo = Matrix(d, d);
        l.ffn_norm = Matrix(1, d);
        if (config.ffn_kind == FfnKind::glu) {
            l.w_gate = Matrix(m, d);
        }
        l.w_key = Matrix(m, d);
        l.w_value = Matrix(m, d);
    }
    w.final_norm = Matrix(1, d);
    w.head = Matrix(v, d);
    return w;
}

Backbone init_backbone(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    const auto d = static_cast<std::size_t>(config.hidden);
    const auto m = static_cast<std::size_t>(config.intermediate);
    const auto v = static_cast<std::size_t>(config.vocab);
    const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
    const double in_m = 1.0 / std::sqrt(static_cast<double>(m));
    const double depth = 1.0 / std::sqrt(2.0 * config.layers);

    Backbone b{config, {}};
    auto& w = b.weights;
    w.embedding = gaussian(v, d, 1.0, rng);
    w.layers.resize(static_cast<std::size_t>(config.layers));
    for (auto& l : w.layers) {
        l.attn_norm = Matrix(1, d, 1.0);
        l.wq = gaussian(d, d, in_d, rng);
        l.wk = gaussian(d, d, in_d, rng);
        l.wv = gaussian(d, d, in_d, rng);
        l.wo = gaussian(d, d, in_d * depth, rng);
        l.ffn_norm = Matrix(1, d, 1.0);
        if (config.ffn_kind == FfnKind::glu) {
            l.w_gate = gaussian(m, d, in_d, rng);
        }
        l.w_key = gaussian(m, d, in_d, rng);
        l.w_value = gaussian(m, d, in_m * depth, rng);
    }
    w.final_norm = Matrix(1, d, 1.0);
    w.head = gaussian(v, d, in_d, rng);
    return b;
}

std::size_t parameter_total(const BackboneWeights& w) {
    std::size_t n = 0;
    for_each_tensor(w, [&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
}

std::uint64_t checksum(const BackboneWeights& w) {
    std::uint64_t h = 1469598103934665603ULL;
    for_each_tensor(w, [&](const std::string&, const Matrix& m) {
        for (double x : m.data()) {
            std::uint64_t bits = 0;
            std::memcpy(&bits, &x, sizeof bits);
            for (int i = 0; i < 8; ++i) {
                h ^= (bits >> (8 * i)) & 0xFF;
                h *= 1099511628211ULL;
            }
        }
    });
    return h;
}

}  // namespace locas
