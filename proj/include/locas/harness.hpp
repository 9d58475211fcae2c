// SPDX-License-Identifier: Apache-2.0
//
// Streaming evaluation over long documents: truncation baseline, Locas
// test-time training, the low-rank adapter baseline, the initialization and
// width ablations, and extra-parameter accounting.
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "locas/attachments.hpp"
#include "locas/memory.hpp"
#include "locas/model.hpp"
#include "locas/optim.hpp"

namespace locas {

enum class Method { trunc, locas_mlp, locas_glu, lowrank };

Method parse_method(std::string_view name);
std::string_view to_string(Method m);

// Extra trainable scalars a method adds to `config`:
// locas-glu 3·L·d·r, locas-mlp 2·L·d·r, lowrank 8·L·d·r + k·L·r·(d+m) with
// k = 3 for GLU backbones and 2 for MLP backbones, trunc 0.
std::uint64_t param_count(const ModelConfig& config, Method method, std::uint64_t r);

struct RunConfig {
    std::size_t chunk_size = 256;
    // Tokens visible to the model when scoring: the chunk plus up to
    // window - chunk_size tokens before it.
    std::size_t window = 256;
    Method method = Method::trunc;
    InitStrategy strategy = InitStrategy::topk;
    std::size_t r = 16;
    double lr = 4e-3;
    int steps_per_chunk = 1;
    OptimizerKind optimizer = OptimizerKind::sgd;
    double epsilon = 1e-2;
    std::uint64_t seed = 0;
    // Emit a record every this many scored tokens and at the document end.
    std::size_t checkpoint_every = 1024;
    // Re-select gate/key rows from every chunk instead of once per document.
    bool reinit_per_chunk = false;

    void validate(const ModelConfig& config) const;
};

struct EvalRecord {
    std::string method;
    int doc_id = 0;
    std::size_t position = 0;     // tokens scored so far
    std::size_t context_len = 0;  // attention span of the last scored token
    double nll = 0.0;             // mean NLL since the previous record
    double ppl = 0.0;             // exp(mean NLL so far)
};

struct StreamResult {
    std::vector<EvalRecord> records;
    Vector token_nll;  // one entry per document token, in order
    std::size_t extra_params = 0;
    // Final state of whichever attachment the method trains.
    GluMemory glu_memory;
    MlpMemory mlp_memory;
    LowRankAdapter adapter;
};

// Scores every token of `document` (a BOS is prepended so the first token is
// predicted too). TTT methods score chunk c before updating on it. Throws
// ShapeError if the document is shorter than 2·chunk_size.
StreamResult stream_eval(const Backbone& backbone, const RunConfig& run, const std::vector<int>& document,
                         int doc_id = 0);

// Mean of the last quarter of `token_nll`.
double final_quarter_nll(std::span<const double> token_nll);

struct AblationRow {
    InitStrategy strategy;
    double final_nll;
    int rank;  // 1 = lowest NLL
};

// One locas-glu run per strategy with the shared `base` settings.
std::vector<AblationRow> ablate_init(const Backbone& backbone, const std::vector<int>& document,
                                     const std::vector<InitStrategy>& strategies, const RunConfig& base);

struct WidthRow {
    std::size_t r;
    std::uint64_t params;
    double final_nll;
};

std::vector<WidthRow> sweep_width(const Backbone& backbone, const std::vector<int>& document,
                                  const std::vector<std::size_t>& r_values, const RunConfig& base);

void write_csv_header(std::ostream& out);
void write_csv(std::ostream& out, const std::vector<EvalRecord>& records);
// %.6g formatting shared by every table writer.
std::string format_float(double v);

}  // namespace locas
