// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "locas/eigen.hpp"
#include "locas/errors.hpp"
#include "locas/memory.hpp"
#include "locas/nlsvd.hpp"
#include "locas/transformer.hpp"

using namespace locas;

namespace {

MlpMemoryLayer random_layer(std::size_t m, std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    MlpMemoryLayer l{Matrix(m, d), Matrix(m, d)};
    for (double& v : l.key.data()) v = dist(rng);
    for (double& v : l.value.data()) v = dist(rng);
    return l;
}

}  // namespace

TEST_CASE("probe equivalence on random memories") {
    std::mt19937_64 rng(41);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t d = 4 + trial % 9;
        const std::size_t m = 3 + (trial * 5) % 20;
        const std::size_t n = 1 + trial % std::min(m, d);
        const MlpMemoryLayer l = random_layer(m, d, rng);
        const Compression c = nl_svd_compress(l, n);
        CHECK(c.report.retained_rank <= n);
        CHECK(c.layer.width() == c.report.retained_rank);
        CHECK(c.report.probe_max_error < 1e-9);
        CHECK(probe_equivalence_check(l, c.layer) < 1e-9);
        double top = 0.0;
        for (double v : c.report.top_eigenvalues) top += v;
        CHECK(std::abs(top + c.report.discarded_mass - c.report.trace) <= 1e-8 * c.report.trace);
        CHECK(c.report.discarded_fraction >= 0.0);
        CHECK(c.report.discarded_fraction <= 1.0);
    }
}

TEST_CASE("rank-one keys keep all mass") {
    MlpMemoryLayer l{Matrix(0, 3), Matrix(0, 3)};
    l.key.append_row(Vector{1.0, 2.0, 2.0});
    l.key.append_row(Vector{-2.0, -4.0, -4.0});
    l.key.append_row(Vector{0.5, 1.0, 1.0});
    l.value.append_row(Vector{1.0, 0.0, 0.0});
    l.value.append_row(Vector{0.0, 2.0, 0.0});
    l.value.append_row(Vector{0.0, 0.0, 4.0});
    const Compression c = nl_svd_compress(l, 1);
    // s = ‖k‖·‖v‖ = 3, 12, 6 so trace = 9 + 144 + 36.
    CHECK(c.report.trace == doctest::Approx(189.0));
    CHECK(c.report.top_eigenvalues[0] == doctest::Approx(189.0));
    CHECK(c.report.discarded_fraction < 1e-12);
    CHECK(c.report.retained_rank == 1);
    // Probe is ±(1,2,2)/3 with a positive largest component.
    CHECK(c.layer.key(0, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(c.layer.key(0, 1) == doctest::Approx(2.0 / 3.0));
    // ⟨p,k0⟩ = 3 and ⟨p,k2⟩ = 1.5; slot 1 is gated off.
    CHECK(c.layer.value(0, 0) == doctest::Approx(3.0));
    CHECK(c.layer.value(0, 1) == doctest::Approx(0.0));
    CHECK(c.layer.value(0, 2) == doctest::Approx(6.0));
}

TEST_CASE("orthogonal keys lose nothing") {
    MlpMemoryLayer l{Matrix(0, 4), Matrix(0, 4)};
    l.key.append_row(Vector{2.0, 0.0, 0.0, 0.0});
    l.key.append_row(Vector{0.0, 0.0, -1.0, 0.0});
    l.key.append_row(Vector{0.0, 0.5, 0.0, 0.0});
    l.value.append_row(Vector{1.0, 1.0, 0.0, 0.0});
    l.value.append_row(Vector{0.0, 3.0, 0.0, 0.0});
    l.value.append_row(Vector{0.0, 0.0, 0.0, 1.0});
    const Compression c = nl_svd_compress(l, 3);
    CHECK(c.report.discarded_mass == doctest::Approx(0.0));
    CHECK(c.report.retained_rank == 3);
    // Each probe lies in span{e0, e1, e2}.
    for (std::size_t j = 0; j < 3; ++j) CHECK(c.layer.key(j, 3) == 0.0);
    CHECK(c.report.probe_max_error < 1e-12);
}

TEST_CASE("compression edge cases") {
    std::mt19937_64 rng(43);
    const MlpMemoryLayer l = random_layer(5, 4, rng);
    CHECK_THROWS_AS(nl_svd_compress(l, 6), CapacityError);

    const Compression clamped = nl_svd_compress(random_layer(8, 3, rng), 6);
    CHECK(clamped.report.retained_rank == 3);
    CHECK(clamped.report.flags == std::vector<std::string>{"target_clamped"});

    MlpMemoryLayer zero{Matrix(3, 4), Matrix(3, 4)};
    const Compression empty = nl_svd_compress(zero, 2);
    CHECK(empty.report.retained_rank == 0);
    CHECK(empty.report.flags == std::vector<std::string>{"empty"});
    CHECK(empty.report.probe_max_error == 0.0);

    const Compression none = nl_svd_compress(l, 0);
    CHECK(none.layer.width() == 0);
}

TEST_CASE("perturbed values are detected") {
    std::mt19937_64 rng(47);
    const MlpMemoryLayer l = random_layer(10, 6, rng);
    Compression c = nl_svd_compress(l, 4);
    std::normal_distribution<double> noise(0.0, 1e-3);
    for (double& v : c.layer.value.data()) v += noise(rng);
    CHECK(probe_equivalence_check(l, c.layer) >= 1e-4);
}

TEST_CASE("rescaling a slot changes nothing") {
    std::mt19937_64 rng(53);
    MlpMemoryLayer l = random_layer(9, 5, rng);
    const Compression base = nl_svd_compress(l, 3);
    for (double c : {0.1, 10.0}) {
        MlpMemoryLayer s = l;
        for (double& v : s.key.row(4)) v *= c;
        for (double& v : s.value.row(4)) v /= c;
        std::normal_distribution<double> dist(0.0, 1.0);
        double worst = 0.0;
        for (int i = 0; i < 1000; ++i) {
            Vector x(5);
            for (double& v : x) v = dist(rng);
            worst = std::max(worst, max_abs_diff(std::span<const double>(mlp_forward(l, x)),
                                                 std::span<const double>(mlp_forward(s, x))));
        }
        CHECK(worst < 1e-10);
        const Compression r = nl_svd_compress(s, 3);
        CHECK(max_abs_diff(r.layer.key, base.layer.key) < 1e-9);
        CHECK(max_abs_diff(r.layer.value, base.layer.value) < 1e-9);
    }
}

TEST_CASE("report lines are JSON") {
    std::mt19937_64 rng(59);
    const Compression c = nl_svd_compress(random_layer(4, 3, rng), 2);
    std::ostringstream out;
    write_report_line(out, c.report, 7, 1);
    const std::string line = out.str();
    CHECK(line.front() == '{');
    CHECK(line.back() == '\n');
    CHECK(std::count(line.begin(), line.end(), '\n') == 1);
    CHECK(line.find("\"retained_rank\":2") != std::string::npos);
}

TEST_CASE("expansion-compression cycle") {
    ModelConfig cfg;
    cfg.layers = 2;
    cfg.hidden = 16;
    cfg.intermediate = 32;
    cfg.heads = 2;
    cfg.max_seq = 64;
    cfg.ffn_kind = FfnKind::mlp;
    const Backbone b = init_backbone(cfg, 3);
    std::mt19937_64 rng(61);
    std::uniform_int_distribution<int> tok(0, 255);
    std::vector<int> tokens(40);
    for (int& t : tokens) t = tok(rng);

    CyclePolicy span{.capacity = 16, .n_target = 8, .cadence = Cadence::per_span, .window = 16};
    MlpMemory mem = empty_mlp_memory(cfg);
    CHECK(run_expansion_compression_cycle(b, mem, {}, span).widths.empty());
    const CycleLog log = run_expansion_compression_cycle(b, mem, tokens, span);
    CHECK(log.compressions.size() == 2 * 2);
    CHECK(log.widths.size() == 40);
    CHECK(log.widths[0] == 1);
    CHECK(log.widths[15] <= 8);
    CHECK(log.widths[16] == log.widths[15] + 1);
    CHECK(mem.width() <= 8 + 8);
    for (const auto& e : log.compressions) CHECK(e.report.probe_max_error < 1e-9);

    CyclePolicy per_token{.capacity = 16, .n_target = 6, .cadence = Cadence::per_token, .window = 16};
    MlpMemory m2 = empty_mlp_memory(cfg);
    const CycleLog l2 = run_expansion_compression_cycle(b, m2, tokens, per_token);
    for (std::size_t t = 0; t < 40; ++t) CHECK(l2.widths[t] == std::min<std::size_t>(t + 1, 6));

    CHECK_THROWS_AS((CyclePolicy{.capacity = 8, .n_target = 8}.validate()), ConfigError);
    ModelConfig glu_cfg = cfg;
    glu_cfg.ffn_kind = FfnKind::glu;
    MlpMemory m3 = empty_mlp_memory(cfg);
    CHECK_THROWS_AS(run_expansion_compression_cycle(init_backbone(glu_cfg, 3), m3, tokens, span), ShapeError);
}
