// SPDX-License-Identifier: Apache-2.0
//
// Non-linear SVD compression of a ReLU key-value memory and the
// expansion-compression cycle that grows a Locas-MLP memory token by token
// and periodically shrinks it.
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "locas/attachments.hpp"
#include "locas/model.hpp"

namespace locas {

struct CompressionReport {
    std::size_t input_rank = 0;   // m
    std::size_t target_rank = 0;  // n as requested
    std::size_t retained_rank = 0;
    Vector composed_scalars;      // s_i = ‖k_i‖·‖v_i‖
    Vector top_eigenvalues;       // the n largest eigenvalues of K̂K̂ᵀ
    double trace = 0.0;           // trace(K̂K̂ᵀ) = Σ s_i²
    double discarded_mass = 0.0;  // eigenvalues beyond the top n
    double discarded_fraction = 0.0;
    double probe_max_error = 0.0;
    // "target_clamped" when n exceeds d, "empty" when nothing is retained.
    std::vector<std::string> flags;
};

struct Compression {
    MlpMemoryLayer layer;  // n'×d keys (unit probes) and n'×d values
    CompressionReport report;
};

// Keys and values are slot-major (row i of each is k_i / v_i). Probes are the
// top eigenvectors of K̂K̂ᵀ, where K̂ stacks s_i·k_i/‖k_i‖; direction j is
// dropped when √λ_j < drop_threshold. Each reduced value is the original
// memory's output at its probe. Throws CapacityError if n exceeds the slot
// count.
Compression nl_svd_compress(const MlpMemoryLayer& memory, std::size_t n, double drop_threshold = 1e-8);

// Max elementwise |original(p) - reduced(p)| over the probe rows of
// `reduced`; 0 when it has none.
double probe_equivalence_check(const MlpMemoryLayer& original, const MlpMemoryLayer& reduced);

enum class Cadence { per_token, per_span };

Cadence parse_cadence(std::string_view name);
std::string_view to_string(Cadence c);

struct CyclePolicy {
    std::size_t capacity = 64;  // appends per span (per-span cadence)
    std::size_t n_target = 32;
    Cadence cadence = Cadence::per_span;
    std::size_t window = 64;  // tokens of attention context per memorized token
    double drop_threshold = 1e-8;

    void validate() const;
};

struct CycleEvent {
    std::size_t token = 0;  // index in the stream of the token just memorized
    std::size_t layer = 0;
    std::size_t rank_before = 0;
    std::size_t rank_after = 0;
    CompressionReport report;
};

struct CycleLog {
    std::vector<CycleEvent> compressions;
    // Memory width after each memorized token.
    std::vector<std::size_t> widths;
};

// Memorizes every token of `tokens` (a BOS is prepended so the first token
// has a predicting position) with the slot append rule and compresses per
// `policy`. The memory must be attached to an MLP backbone.
CycleLog run_expansion_compression_cycle(const Backbone& backbone, MlpMemory& memory, std::span<const int> tokens,
                                         const CyclePolicy& policy);

// One JSON object per line.
void write_report_line(std::ostream& out, const CompressionReport& report, std::size_t token, std::size_t layer);

}  // namespace locas
