// SPDX-License-Identifier: Apache-2.0
#include "locas/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>

#include "locas/adapter.hpp"
#include "locas/errors.hpp"
#include "locas/transformer.hpp"

namespace locas {

Method parse_method(std::string_view name) {
    if (name == "trunc") return Method::trunc;
    if (name == "locas-mlp") return Method::locas_mlp;
    if (name == "locas-glu") return Method::locas_glu;
    if (name == "lowrank-baseline" || name == "lowrank") return Method::lowrank;
    throw ConfigError("unknown method '" + std::string(name) +
                      "' (expected trunc|locas-mlp|locas-glu|lowrank-baseline)");
}

std::string_view to_string(Method m) {
    switch (m) {
        case Method::trunc: return "trunc";
        case Method::locas_mlp: return "locas-mlp";
        case Method::locas_glu: return "locas-glu";
        case Method::lowrank: return "lowrank-baseline";
    }
    return "?";
}

std::uint64_t param_count(const ModelConfig& config, Method method, std::uint64_t r) {
    const auto L = static_cast<std::uint64_t>(config.layers);
    const auto d = static_cast<std::uint64_t>(config.hidden);
    const auto m = static_cast<std::uint64_t>(config.intermediate);
    switch (method) {
        case Method::trunc: return 0;
        case Method::locas_mlp: return 2 * L * d * r;
        case Method::locas_glu: return 3 * L * d * r;
        case Method::lowrank: {
            const std::uint64_t ffn_maps = config.ffn_kind == FfnKind::glu ? 3 : 2;
            return 8 * L * d * r + ffn_maps * L * r * (d + m);
        }
    }
    return 0;
}

void RunConfig::validate(const ModelConfig& config) const {
    if (chunk_size == 0) throw ConfigError("chunk_size must be >= 1");
    if (chunk_size > window) throw ConfigError("chunk_size must not exceed window");
    if (window > static_cast<std::size_t>(config.max_seq)) {
        throw ConfigError("window " + std::to_string(window) + " exceeds max_seq " + std::to_string(config.max_seq));
    }
    if (steps_per_chunk < 1) throw ConfigError("steps_per_chunk must be >= 1");
    if (checkpoint_every == 0) throw ConfigError("checkpoint_every must be >= 1");
    if (!std::isfinite(lr) || lr < 0.0) throw ConfigError("lr must be finite and >= 0");
    if (method != Method::trunc && r == 0) throw CapacityError("memory/adapter width r must be >= 1");
    if ((method == Method::locas_glu || method == Method::locas_mlp) &&
        r > static_cast<std::size_t>(config.intermediate)) {
        throw CapacityError("r = " + std::to_string(r) + " exceeds backbone FFN width " +
                            std::to_string(config.intermediate));
    }
}

double final_quarter_nll(std::span<const double> token_nll) {
    if (token_nll.empty()) {
        throw ShapeError("final_quarter_nll: no tokens");
    }
    const std::size_t n = std::max<std::size_t>(1, token_nll.size() / 4);
    const auto tail = token_nll.subspan(token_nll.size() - n);
    return std::accumulate(tail.begin(), tail.end(), 0.0) / static_cast<double>(n);
}

namespace {

// Per-layer (FFN input, log-likelihood gradient) pairs at r evenly spaced
// positions of the first chunk, for the Locas-MLP slot rule.
struct SlotSources {
    std::vector<LayerVectors> activations;
    std::vector<LayerVectors> grads;
};

SlotSources slot_sources(const Backbone& backbone, std::span<const int> stream, std::size_t chunk, std::size_t r,
                         const ForwardResult& pass) {
    if (r > chunk) {
        throw CapacityError("cannot place " + std::to_string(r) + " slots in a chunk of " + std::to_string(chunk));
    }
    SlotSources s;
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t p = (2 * k + 1) * chunk / (2 * r);
        LayerVectors a;
        for (const auto& m : pass.trace.ffn_input) {
            const auto row = m.row(p);
            a.emplace_back(row.begin(), row.end());
        }
        s.activations.push_back(std::move(a));
        s.grads.push_back(log_likelihood_hidden_grads(backbone, stream.subspan(0, p + 2), p));
    }
    return s;
}

// `pass` is null for the gaussian strategy, which needs no importance.
void init_glu_from_trace(const Backbone& backbone, GluMemory& mem, const ForwardResult* pass, const RunConfig& run,
                         bool keep_values) {
    for (std::size_t l = 0; l < mem.layers.size(); ++l) {
        const Vector alpha = pass ? activation_importance(pass->trace.ffn_intermediate[l]) : Vector{};
        GluMemoryLayer fresh =
            glu_init_from_backbone(backbone.weights.layers[l], alpha, run.r, run.strategy, run.seed + l);
        if (keep_values && mem.layers[l].width() == run.r) {
            fresh.value = mem.layers[l].value;
        }
        mem.layers[l] = std::move(fresh);
    }
}

}  // namespace

StreamResult stream_eval(const Backbone& backbone, const RunConfig& run, const std::vector<int>& document,
                         int doc_id) {
    run.validate(backbone.config);
    const std::size_t C = run.chunk_size;
    if (document.size() < 2 * C) {
        throw ShapeError("document of " + std::to_string(document.size()) + " tokens is shorter than 2 chunks of " +
                         std::to_string(C));
    }
    const bool mlp_rule_init = run.method == Method::locas_mlp ||
                               (run.method == Method::locas_glu && run.strategy == InitStrategy::normalized_activation);
    if (run.method == Method::locas_glu && run.strategy != InitStrategy::normalized_activation &&
        run.strategy != InitStrategy::gaussian && backbone.config.ffn_kind != FfnKind::glu) {
        throw ShapeError("locas-glu cloning strategies need a GLU backbone");
    }

    std::vector<int> stream;
    stream.reserve(document.size() + 1);
    stream.push_back(kBosToken);
    stream.insert(stream.end(), document.begin(), document.end());
    const std::size_t N = document.size();

    GluMemory glu;
    MlpMemory mlp;
    LowRankAdapter adapter;
    Attachments att;
    if (run.method == Method::locas_glu) {
        glu = empty_glu_memory(backbone.config);
        att.glu_memory = &glu;
    } else if (run.method == Method::locas_mlp) {
        mlp = empty_mlp_memory(backbone.config, run.epsilon);
        att.mlp_memory = &mlp;
    } else if (run.method == Method::lowrank) {
        adapter = lowrank_baseline_attach(backbone, run.r, run.seed);
        att.adapter = &adapter;
    }
    Optimizer optimizer(run.optimizer);

    StreamResult result;
    result.token_nll.reserve(N);
    const std::string label(to_string(run.method));
    double total = 0.0;
    double since = 0.0;
    std::size_t since_count = 0;

    for (std::size_t begin = 0; begin < N; begin += C) {
        const std::size_t end = std::min(begin + C, N);
        const std::size_t start = end > run.window ? end - run.window : 0;
        const std::span<const int> input(stream.data() + start, end - start);
        std::vector<int> targets(input.size(), -1);
        for (std::size_t i = begin; i < end; ++i) targets[i - start] = stream[i + 1];

        const bool first = begin == 0;
        if (run.method == Method::locas_glu && !mlp_rule_init && (first || run.reinit_per_chunk)) {
            if (run.strategy == InitStrategy::gaussian) {
                if (first) init_glu_from_trace(backbone, glu, nullptr, run, false);
            } else {
                const ForwardResult probe = forward(backbone, input);
                init_glu_from_trace(backbone, glu, &probe, run, !first);
            }
        }

        const ForwardResult pass = forward(backbone, input, att);
        const Vector nll = position_nll(pass.logits, targets);
        for (std::size_t i = begin; i < end; ++i) {
            const double v = nll[i - start];
            result.token_nll.push_back(v);
            total += v;
            since += v;
            ++since_count;
            const std::size_t scored = i + 1;
            if (scored % run.checkpoint_every == 0 || scored == N) {
                const double mean = total / static_cast<double>(scored);
                result.records.push_back({label, doc_id, scored, i + 1 - start,
                                          since / static_cast<double>(since_count), std::exp(mean)});
                since = 0.0;
                since_count = 0;
            }
        }
        if (!std::isfinite(total)) {
            throw NumericalError("non-finite NLL in chunk starting at token " + std::to_string(begin));
        }

        // Memorize the chunk that was just scored.
        if (run.method == Method::trunc) {
            continue;
        }
        if (mlp_rule_init && first) {
            const SlotSources s = slot_sources(backbone, stream, C, run.r, pass);
            if (run.method == Method::locas_mlp) {
                for (std::size_t k = 0; k < run.r; ++k) mlp_append_slot(mlp, s.activations[k], s.grads[k]);
            } else {
                glu = glu_init_from_activations(backbone, s.activations, s.grads, run.epsilon);
            }
            continue;
        }
        for (int step = 0; step < run.steps_per_chunk; ++step) {
            std::optional<ForwardResult> fresh;
            if (step > 0) fresh = forward(backbone, input, att);
            const ForwardResult& p = fresh ? *fresh : pass;
            if (run.method == Method::locas_glu) {
                memory_update_from_pass(backbone, glu, p, targets, optimizer, run.lr);
            } else if (run.method == Method::locas_mlp) {
                memory_update_from_pass(backbone, mlp, p, targets, optimizer, run.lr);
            } else {
                const Matrix dlogits = nll_gradient(p.logits, targets, 1.0);
                const Gradients g = backward(backbone, att, p, dlogits, {.adapter = true});
                optimizer.step(parameters(adapter), parameters(*g.adapter), run.lr);
            }
        }
    }

    switch (run.method) {
        case Method::locas_glu: result.extra_params = 3 * glu.layers.size() * glu.width() * backbone.config.hidden; break;
        case Method::locas_mlp: result.extra_params = 2 * mlp.layers.size() * mlp.width() * backbone.config.hidden; break;
        case Method::lowrank: result.extra_params = allocated_scalars(adapter); break;
        case Method::trunc: break;
    }
    result.glu_memory = std::move(glu);
    result.mlp_memory = std::move(mlp);
    result.adapter = std::move(adapter);
    return result;
}

std::vector<AblationRow> ablate_init(const Backbone& backbone, const std::vector<int>& document,
                                     const std::vector<InitStrategy>& strategies, const RunConfig& base) {
    if (strategies.empty()) {
        throw ConfigError("ablate_init: no strategies given");
    }
    std::vector<AblationRow> rows;
    for (InitStrategy s : strategies) {
        RunConfig run = base;
        run.method = Method::locas_glu;
        run.strategy = s;
        rows.push_back({s, final_quarter_nll(stream_eval(backbone, run, document).token_nll), 0});
    }
    std::vector<std::size_t> order(rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rows[a].final_nll < rows[b].final_nll; });
    for (std::size_t k = 0; k < order.size(); ++k) rows[order[k]].rank = static_cast<int>(k) + 1;
    return rows;
}

std::vector<WidthRow> sweep_width(const Backbone& backbone, const std::vector<int>& document,
                                  const std::vector<std::size_t>& r_values, const RunConfig& base) {
    if (r_values.empty()) {
        throw ConfigError("sweep_width: no widths given");
    }
    for (std::size_t r : r_values) {
        if (r == 0 || r > static_cast<std::size_t>(backbone.config.intermediate)) {
            throw CapacityError("sweep_width: r = " + std::to_string(r) + " outside [1, " +
                                std::to_string(backbone.config.intermediate) + "]");
        }
    }
    std::vector<WidthRow> rows;
    for (std::size_t r : r_values) {
        RunConfig run = base;
        run.r = r;
        const StreamResult res = stream_eval(backbone, run, document);
        rows.push_back({r, param_count(backbone.config, run.method, r), final_quarter_nll(res.token_nll)});
    }
    return rows;
}

std::string format_float(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

void write_csv_header(std::ostream& out) { out << "method,doc_id,position,context_len,nll,ppl\n"; }

void write_csv(std::ostream& out, const std::vector<EvalRecord>& records) {
    for (const auto& r : records) {
        out << r.method << ',' << r.doc_id << ',' << r.position << ',' << r.context_len << ',' << format_float(r.nll)
            << ',' << format_float(r.ppl) << '\n';
    }
}

}  // namespace locas
