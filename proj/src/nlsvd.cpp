// SPDX-License-Identifier: Apache-2.0
#include "locas/nlsvd.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <json.hpp>

#include "locas/eigen.hpp"
#include "locas/errors.hpp"
#include "locas/memory.hpp"
#include "locas/transformer.hpp"

namespace locas {

Compression nl_svd_compress(const MlpMemoryLayer& memory, std::size_t n, double drop_threshold) {
    const std::size_t m = memory.key.rows();
    const std::size_t d = memory.key.cols();
    if (memory.value.rows() != m) {
        throw ShapeError("nl_svd_compress: " + std::to_string(m) + " keys but " + std::to_string(memory.value.rows()) +
                         " values");
    }
    if (n > m) {
        throw CapacityError("nl_svd_compress: target rank " + std::to_string(n) + " exceeds memory width " +
                            std::to_string(m));
    }
    Compression out;
    CompressionReport& rep = out.report;
    rep.input_rank = m;
    rep.target_rank = n;
    const std::size_t dv = m > 0 ? memory.value.cols() : d;
    out.layer = MlpMemoryLayer{Matrix(0, d), Matrix(0, dv)};

    // K̂ (slot-major): row i = s_i·k_i/‖k_i‖ = ‖v_i‖·k_i.
    Matrix k_hat(m, d);
    rep.composed_scalars.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double alpha = l2_norm(memory.key.row(i));
        const double beta = l2_norm(memory.value.row(i));
        const double s = alpha * beta;
        rep.composed_scalars[i] = s;
        if (alpha > 0.0) {
            const auto k = memory.key.row(i);
            for (std::size_t c = 0; c < d; ++c) k_hat(i, c) = s * (k[c] / alpha);
        }
        rep.trace += s * s;
    }
    if (n > d) {
        rep.flags.emplace_back("target_clamped");
    }
    const std::size_t keep = std::min(n, d);
    if (m == 0 || d == 0) {
        rep.flags.emplace_back("empty");
        return out;
    }

    Matrix gram(d, d);
    matmul_tn_acc(k_hat, k_hat, gram);
    const SymmetricEigen evd = symmetric_evd(gram);
    for (std::size_t j = 0; j < evd.values.size(); ++j) {
        if (j < keep) {
            rep.top_eigenvalues.push_back(evd.values[j]);
        } else {
            rep.discarded_mass += evd.values[j];
        }
    }
    rep.discarded_fraction = rep.trace > 0.0 ? std::clamp(rep.discarded_mass / rep.trace, 0.0, 1.0) : 0.0;

    Vector probe(d);
    for (std::size_t j = 0; j < keep; ++j) {
        if (!(std::sqrt(std::max(evd.values[j], 0.0)) >= drop_threshold)) {
            continue;
        }
        for (std::size_t c = 0; c < d; ++c) probe[c] = evd.vectors(c, j);
        out.layer.key.append_row(probe);
        out.layer.value.append_row(mlp_forward(memory, probe));
    }
    rep.retained_rank = out.layer.key.rows();
    if (rep.retained_rank == 0) {
        rep.flags.emplace_back("empty");
    }
    rep.probe_max_error = probe_equivalence_check(memory, out.layer);
    return out;
}

double probe_equivalence_check(const MlpMemoryLayer& original, const MlpMemoryLayer& reduced) {
    double worst = 0.0;
    for (std::size_t j = 0; j < reduced.key.rows(); ++j) {
        const auto p = reduced.key.row(j);
        worst = std::max(worst, max_abs_diff(std::span<const double>(mlp_forward(original, p)),
                                             std::span<const double>(mlp_forward(reduced, p))));
    }
    return worst;
}

Cadence parse_cadence(std::string_view name) {
    if (name == "per-token") return Cadence::per_token;
    if (name == "per-span") return Cadence::per_span;
    throw ConfigError("unknown cadence '" + std::string(name) + "' (expected per-token|per-span)");
}

std::string_view to_string(Cadence c) { return c == Cadence::per_token ? "per-token" : "per-span"; }

void CyclePolicy::validate() const {
    if (n_target >= capacity) {
        throw ConfigError("n_target (" + std::to_string(n_target) + ") must be below capacity (" +
                          std::to_string(capacity) + ")");
    }
    if (window == 0) throw ConfigError("cycle window must be >= 1");
}

CycleLog run_expansion_compression_cycle(const Backbone& backbone, MlpMemory& memory, std::span<const int> tokens,
                                         const CyclePolicy& policy) {
    policy.validate();
    CycleLog log;
    if (tokens.empty()) {
        return log;
    }
    if (backbone.config.ffn_kind != FfnKind::mlp) {
        throw ShapeError("expansion-compression cycle needs an MLP backbone");
    }
    if (memory.layers.size() != static_cast<std::size_t>(backbone.config.layers)) {
        throw ShapeError("memory layer count does not match backbone");
    }
    const std::size_t window = std::min<std::size_t>(policy.window, static_cast<std::size_t>(backbone.config.max_seq));
    std::vector<int> stream;
    stream.reserve(tokens.size() + 1);
    stream.push_back(kBosToken);
    stream.insert(stream.end(), tokens.begin(), tokens.end());

    Attachments att;
    att.mlp_memory = &memory;
    std::size_t since_compress = 0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        // Stream position t predicts tokens[t].
        const std::size_t start = t + 1 > window ? t + 1 - window : 0;
        const std::span<const int> input(stream.data() + start, t + 1 - start);
        const std::size_t p = input.size() - 1;
        const ForwardResult pass = forward(backbone, input, att);
        std::vector<int> targets(input.size(), -1);
        targets[p] = tokens[t];
        const Gradients g = backward(backbone, att, pass, nll_gradient(pass.logits, targets, -1.0), {.hidden = true});
        LayerVectors acts, grads;
        for (std::size_t l = 0; l < memory.layers.size(); ++l) {
            const auto a = pass.trace.ffn_input[l].row(p);
            const auto h = g.hidden[l].row(p);
            acts.emplace_back(a.begin(), a.end());
            grads.emplace_back(h.begin(), h.end());
        }
        mlp_append_slot(memory, acts, grads);
        ++since_compress;

        const bool due = policy.cadence == Cadence::per_token ? memory.width() > policy.n_target
                                                              : since_compress == policy.capacity;
        if (due) {
            since_compress = 0;
            for (std::size_t l = 0; l < memory.layers.size(); ++l) {
                const std::size_t before = memory.layers[l].width();
                Compression c = nl_svd_compress(memory.layers[l], policy.n_target, policy.drop_threshold);
                memory.layers[l] = std::move(c.layer);
                log.compressions.push_back({t, l, before, memory.layers[l].width(), std::move(c.report)});
            }
            // Layers may retain different ranks; pad so every layer has the
            // same slot count (zero slots contribute nothing).
            const std::size_t width = std::max_element(memory.layers.begin(), memory.layers.end(),
                                                       [](const auto& a, const auto& b) {
                                                           return a.width() < b.width();
                                                       })->width();
            for (auto& l : memory.layers) {
                while (l.width() < width) {
                    l.key.append_row(Vector(l.key.cols(), 0.0));
                    l.value.append_row(Vector(l.value.cols(), 0.0));
                }
            }
        }
        log.widths.push_back(memory.width());
    }
    return log;
}

void write_report_line(std::ostream& out, const CompressionReport& r, std::size_t token, std::size_t layer) {
    nlohmann::json j;
    j["token"] = token;
    j["layer"] = layer;
    j["input_rank"] = r.input_rank;
    j["target_rank"] = r.target_rank;
    j["retained_rank"] = r.retained_rank;
    j["composed_scalars"] = r.composed_scalars;
    j["top_eigenvalues"] = r.top_eigenvalues;
    j["trace"] = r.trace;
    j["discarded_mass"] = r.discarded_mass;
    j["discarded_fraction"] = r.discarded_fraction;
    j["probe_max_error"] = r.probe_max_error;
    j["flags"] = r.flags;
    out << j.dump() << '\n';
}

}  // namespace locas
