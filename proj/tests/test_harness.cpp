// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "locas/adapter.hpp"
#include "locas/errors.hpp"
#include "locas/harness.hpp"
#include "locas/transformer.hpp"

using namespace locas;

namespace {

ModelConfig small_config(FfnKind kind) {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 16;
    c.intermediate = 24;
    c.heads = 2;
    c.max_seq = 64;
    c.ffn_kind = kind;
    return c;
}

std::vector<int> random_doc(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dist(97, 110);
    std::vector<int> t(n);
    for (int& v : t) v = dist(rng);
    return t;
}

RunConfig small_run(Method m) {
    RunConfig r;
    r.chunk_size = 32;
    r.window = 48;
    r.method = m;
    r.r = 4;
    r.lr = 0.05;
    r.checkpoint_every = 64;
    return r;
}

std::string csv(const std::vector<EvalRecord>& recs) {
    std::ostringstream out;
    write_csv_header(out);
    write_csv(out, recs);
    return out.str();
}

}  // namespace

TEST_CASE("method names") {
    for (auto m : {Method::trunc, Method::locas_mlp, Method::locas_glu, Method::lowrank}) {
        CHECK(parse_method(to_string(m)) == m);
    }
    CHECK_THROWS_AS(parse_method("lora"), ConfigError);
}

TEST_CASE("parameter counts") {
    ModelConfig large;
    large.layers = 28;
    large.hidden = 2048;
    large.intermediate = 6144;
    large.ffn_kind = FfnKind::glu;
    CHECK(param_count(large, Method::locas_glu, 64) == 11010048ULL);
    CHECK(param_count(large, Method::lowrank, 64) == 73400320ULL);
    CHECK(param_count(large, Method::locas_glu, 0) == 0);
    CHECK(param_count(large, Method::locas_glu, 128) == 2 * param_count(large, Method::locas_glu, 64));
    CHECK(param_count(large, Method::locas_mlp, 64) == 2ULL * 28 * 2048 * 64);
    CHECK(param_count(large, Method::trunc, 64) == 0);

    for (auto kind : {FfnKind::glu, FfnKind::mlp}) {
        const Backbone b = init_backbone(small_config(kind), 1);
        const LowRankAdapter a = lowrank_baseline_attach(b, 3, 0);
        CHECK(allocated_scalars(a) == param_count(b.config, Method::lowrank, 3));
    }
}

TEST_CASE("zero-initialized adapter is transparent") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 2);
    const LowRankAdapter a = lowrank_baseline_attach(b, 2, 5);
    const auto doc = random_doc(30, 1);
    Attachments att;
    att.adapter = &a;
    CHECK(forward(b, doc, att).logits == forward(b, doc).logits);
    CHECK_THROWS_AS(lowrank_baseline_attach(b, 0, 0), ShapeError);
}

TEST_CASE("stream_eval records") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 3);
    const auto doc = random_doc(200, 2);
    const StreamResult r = stream_eval(b, small_run(Method::trunc), doc, 4);
    CHECK(r.token_nll.size() == 200);
    REQUIRE(r.records.size() == 4);
    CHECK(r.records[0].position == 64);
    CHECK(r.records[3].position == 200);
    double total = 0.0;
    for (double v : r.token_nll) total += v;
    CHECK(r.records.back().ppl == doctest::Approx(std::exp(total / 200.0)).epsilon(1e-12));
    for (std::size_t i = 1; i < r.records.size(); ++i) CHECK(r.records[i].position > r.records[i - 1].position);
    CHECK(r.records[0].doc_id == 4);
    CHECK(r.records[0].method == "trunc");
    // Token 63 is the last of chunk 1, whose forward spans tokens 16..63.
    CHECK(r.records[0].context_len == 48);
    CHECK(r.records[3].context_len == 48);
}

TEST_CASE("stream_eval preconditions") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 3);
    CHECK_THROWS_AS(stream_eval(b, small_run(Method::trunc), random_doc(63, 1)), ShapeError);
    RunConfig bad = small_run(Method::trunc);
    bad.window = 16;
    CHECK_THROWS_AS(stream_eval(b, bad, random_doc(100, 1)), ConfigError);
    bad = small_run(Method::trunc);
    bad.window = 65;
    CHECK_THROWS_AS(stream_eval(b, bad, random_doc(100, 1)), ConfigError);
    bad = small_run(Method::locas_glu);
    bad.r = 25;
    CHECK_THROWS_AS(stream_eval(b, bad, random_doc(100, 1)), CapacityError);
    const Backbone mlp = init_backbone(small_config(FfnKind::mlp), 3);
    CHECK_THROWS_AS(stream_eval(mlp, small_run(Method::locas_glu), random_doc(100, 1)), ShapeError);
}

TEST_CASE("short documents match unbounded context") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 4);
    const auto doc = random_doc(64, 3);
    RunConfig run = small_run(Method::trunc);
    run.window = 64;
    const StreamResult r = stream_eval(b, run, doc);
    std::vector<int> stream{kBosToken};
    stream.insert(stream.end(), doc.begin(), doc.end() - 1);
    std::vector<int> targets(doc.begin(), doc.end());
    const Vector full = position_nll(forward(b, stream).logits, targets);
    CHECK(max_abs_diff(std::span<const double>(full), std::span<const double>(r.token_nll)) == 0.0);
}

TEST_CASE("zero learning rate reproduces truncation") {
    const auto doc = random_doc(160, 5);
    const Backbone glu = init_backbone(small_config(FfnKind::glu), 5);
    const StreamResult base = stream_eval(glu, small_run(Method::trunc), doc);
    for (auto m : {Method::locas_glu, Method::lowrank}) {
        for (auto opt : {OptimizerKind::sgd, OptimizerKind::adam}) {
            RunConfig run = small_run(m);
            run.lr = 0.0;
            run.optimizer = opt;
            const StreamResult r = stream_eval(glu, run, doc);
            CHECK(r.token_nll == base.token_nll);
            auto relabeled = r.records;
            for (auto& rec : relabeled) rec.method = "trunc";
            CHECK(csv(relabeled) == csv(base.records));
        }
    }
}

TEST_CASE("score then memorize") {
    const auto doc = random_doc(160, 6);
    auto changed = doc;
    for (std::size_t i = 96; i < 128; ++i) changed[i] = 'z';
    for (auto kind : {FfnKind::glu, FfnKind::mlp}) {
        const Backbone b = init_backbone(small_config(kind), 6);
        for (auto m : {Method::locas_glu, Method::locas_mlp, Method::lowrank}) {
            if (kind == FfnKind::mlp && m == Method::locas_glu) continue;
            RunConfig run = small_run(m);
            const StreamResult a = stream_eval(b, run, doc);
            const StreamResult c = stream_eval(b, run, changed);
            for (std::size_t i = 0; i < 96; ++i) CHECK(a.token_nll[i] == c.token_nll[i]);
            CHECK(a.token_nll[100] != c.token_nll[100]);
        }
    }
}

TEST_CASE("ttt methods learn and account for their parameters") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 7);
    std::vector<int> doc;
    const auto motif = random_doc(40, 7);
    while (doc.size() < 320) doc.insert(doc.end(), motif.begin(), motif.end());
    const double trunc = final_quarter_nll(stream_eval(b, small_run(Method::trunc), doc).token_nll);
    for (auto m : {Method::locas_glu, Method::locas_mlp, Method::lowrank}) {
        RunConfig run = small_run(m);
        run.lr = m == Method::locas_mlp ? 0.02 : 0.05;
        const StreamResult r = stream_eval(b, run, doc);
        CHECK(final_quarter_nll(r.token_nll) < trunc);
        CHECK(r.extra_params == param_count(b.config, m, run.r));
    }
}

TEST_CASE("determinism and csv format") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 8);
    const auto doc = random_doc(128, 8);
    RunConfig run = small_run(Method::locas_glu);
    run.strategy = InitStrategy::random_selection;
    CHECK(csv(stream_eval(b, run, doc).records) == csv(stream_eval(b, run, doc).records));

    std::vector<EvalRecord> recs{{"trunc", 2, 1024, 256, 1.0 / 3.0, 123456789.0}};
    CHECK(csv(recs) == "method,doc_id,position,context_len,nll,ppl\ntrunc,2,1024,256,0.333333,1.23457e+08\n");
    CHECK(format_float(2.5) == "2.5");
}

TEST_CASE("ablation and width sweep") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 9);
    const auto doc = random_doc(128, 9);
    RunConfig base = small_run(Method::locas_glu);
    CHECK_THROWS_AS(ablate_init(b, doc, {}, base), ConfigError);
    const auto one = ablate_init(b, doc, {InitStrategy::topk}, base);
    REQUIRE(one.size() == 1);
    CHECK(one[0].rank == 1);
    const auto twice = ablate_init(b, doc, {InitStrategy::gaussian, InitStrategy::gaussian}, base);
    CHECK(twice[0].final_nll == twice[1].final_nll);
    CHECK(twice[0].rank != twice[1].rank);

    const auto rows = sweep_width(b, doc, {2, 4}, base);
    CHECK(rows[1].params == 2 * rows[0].params);
    CHECK_NOTHROW(sweep_width(b, doc, {24}, base));
    CHECK_THROWS_AS(sweep_width(b, doc, {25}, base), CapacityError);
    CHECK_THROWS_AS(sweep_width(b, doc, {}, base), ConfigError);
}

TEST_CASE("normalized-activation init memorizes the first chunk") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 10);
    const auto doc = random_doc(128, 10);
    RunConfig run = small_run(Method::locas_glu);
    run.strategy = InitStrategy::normalized_activation;
    run.lr = 1e-6;
    const StreamResult r = stream_eval(b, run, doc);
    const StreamResult t = stream_eval(b, small_run(Method::trunc), doc);
    for (std::size_t i = 0; i < 32; ++i) CHECK(r.token_nll[i] == t.token_nll[i]);
    CHECK(r.token_nll[40] != t.token_nll[40]);
    CHECK(r.extra_params == param_count(b.config, Method::locas_glu, 4));
}
