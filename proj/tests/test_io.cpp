// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "doctest.h"
#include "locas/checkpoint.hpp"
#include "locas/corpus.hpp"
#include "locas/errors.hpp"
#include "locas/memory.hpp"
#include "locas/trainer.hpp"
#include "locas/transformer.hpp"

using namespace locas;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
    return fs::temp_directory_path() / ("locas_test_" + std::to_string(::getpid()) + "_" + name);
}

ModelConfig small_config(FfnKind kind) {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 16;
    c.intermediate = 24;
    c.heads = 2;
    c.max_seq = 64;
    c.ffn_kind = kind;
    c.rope_base = 5000.5;
    return c;
}

}  // namespace

TEST_CASE("container byte layout") {
    Container c;
    c.config.emplace_back("a", std::uint64_t{5});
    Matrix t(1, 1);
    t(0, 0) = 1.0;
    c.tensors.emplace_back("t", t);
    const std::string bytes = encode_container(c);
    const unsigned char expected[] = {
        'L', 'O', 'C', 'A', 1, 0, 0, 0,     // magic, version
        18, 0, 0, 0, 1, 0, 0, 0,            // config bytes, entry count
        1, 0, 0, 0, 'a', 0,                 // name, tag
        5, 0, 0, 0, 0, 0, 0, 0,             // value
        1, 0, 0, 0, 1, 0, 0, 0, 't',        // tensor count, name
        1, 0, 0, 0, 0, 0, 0, 0,             // rows
        1, 0, 0, 0, 0, 0, 0, 0,             // cols
        0, 0, 0, 0, 0, 0, 0xf0, 0x3f,       // 1.0
    };
    REQUIRE(bytes.size() == sizeof expected);
    CHECK(std::equal(bytes.begin(), bytes.end(), reinterpret_cast<const char*>(expected)));

    const Container back = decode_container(bytes);
    CHECK(std::get<std::uint64_t>(*back.find_config("a")) == 5);
    CHECK(*back.find_tensor("t") == t);
    CHECK(back.find_tensor("missing") == nullptr);
}

TEST_CASE("container rejects damaged input") {
    Container c;
    c.config.emplace_back("name", std::string("value"));
    c.tensors.emplace_back("w", Matrix(2, 3));
    const std::string bytes = encode_container(c);
    CHECK_THROWS_AS(decode_container(bytes.substr(0, bytes.size() - 1)), FormatError);
    CHECK_THROWS_AS(decode_container(bytes + "x"), FormatError);
    std::string magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_container(magic), FormatError);
    std::string version = bytes;
    version[4] = 9;
    try {
        decode_container(version);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        CHECK(msg.find('9') != std::string::npos);
        CHECK(msg.find('1') != std::string::npos);
    }
}

TEST_CASE("backbone checkpoint round trip") {
    const fs::path path = temp_file("backbone.bin");
    for (auto kind : {FfnKind::glu, FfnKind::mlp}) {
        const Backbone b = init_backbone(small_config(kind), 11);
        save_checkpoint(b, path);
        const Backbone back = load_checkpoint(path);
        CHECK(back.config == b.config);
        CHECK(back.weights == b.weights);
        CHECK(checksum(back.weights) == checksum(b.weights));
    }
    {
        std::ifstream in(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes.substr(0, bytes.size() / 2);
    }
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
    fs::remove(path);
    CHECK_THROWS_AS(load_checkpoint(path), FormatError);
}

TEST_CASE("memory checkpoint round trip") {
    const fs::path path = temp_file("memory.bin");
    std::mt19937_64 rng(3);
    std::normal_distribution<double> dist(0.0, 1.0);
    const Backbone b = init_backbone(small_config(FfnKind::glu), 12);
    GluMemory glu = empty_glu_memory(b.config);
    for (std::size_t l = 0; l < 2; ++l) {
        glu.layers[l] = glu_init_from_backbone(b.weights.layers[l], Vector(24, 1.0), 5, InitStrategy::topk, 0);
        for (double& v : glu.layers[l].value.data()) v = dist(rng);
        glu.layers[l].tau = 0.1 / 3.0 + static_cast<double>(l);
    }
    save_memory(glu, path);
    const GluMemory g2 = load_glu_memory(path);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(g2.layers[l].gate == glu.layers[l].gate);
        CHECK(g2.layers[l].key == glu.layers[l].key);
        CHECK(g2.layers[l].value == glu.layers[l].value);
        CHECK(g2.layers[l].tau == glu.layers[l].tau);
        CHECK(g2.layers[l].selection == glu.layers[l].selection);
    }
    CHECK_THROWS_AS(load_mlp_memory(path), FormatError);

    MlpMemory mlp = empty_mlp_memory(b.config, 0.037);
    LayerVectors a(2, Vector(16, 0.5)), g(2, Vector(16, -0.25));
    mlp_append_slot(mlp, a, g);
    save_memory(mlp, path);
    const MlpMemory m2 = load_mlp_memory(path);
    CHECK(m2.epsilon == 0.037);
    CHECK(m2.layers[1].key == mlp.layers[1].key);
    CHECK(m2.layers[1].value == mlp.layers[1].value);
    fs::remove(path);
}

TEST_CASE("synthetic corpus contract") {
    const SyntheticCorpus a = make_synthetic_corpus({.seed = 0, .n_docs = 3, .doc_len = 4096});
    const SyntheticCorpus b = make_synthetic_corpus({.seed = 0, .n_docs = 3, .doc_len = 4096});
    CHECK(a.documents == b.documents);
    const SyntheticCorpus c = make_synthetic_corpus({.seed = 1, .n_docs = 3, .doc_len = 4096});
    CHECK(a.documents != c.documents);
    for (std::size_t d = 0; d < 3; ++d) {
        CHECK(a.documents[d].size() == 4096);
        CHECK(decode_bytes(a.documents[d]) == a.texts[d]);
        REQUIRE(!a.entities[d].empty());
        for (const auto& e : a.entities[d]) CHECK(count_occurrences(a.texts[d], e) >= 20);
    }
    CHECK(count_occurrences("abababa", "aba") == 2);
}

TEST_CASE("trainer") {
    const SyntheticCorpus corpus = make_synthetic_corpus({.seed = 2, .n_docs = 2, .doc_len = 2048});
    const ModelConfig cfg = small_config(FfnKind::glu);
    TrainOptions o;
    o.steps = 0;
    o.seq_len = 32;
    CHECK(train_tiny_backbone(corpus.documents, cfg, o).backbone.weights == init_backbone(cfg, o.seed).weights);

    o.steps = 40;
    o.seq_len = 32;
    o.batch = 2;
    o.warmup = 5;
    o.lr = 1e-2;
    const TrainResult r1 = train_tiny_backbone(corpus.documents, cfg, o);
    const TrainResult r2 = train_tiny_backbone(corpus.documents, cfg, o);
    CHECK(r1.backbone.weights == r2.backbone.weights);
    REQUIRE(r1.loss_curve.size() == 40);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 5; ++i) {
        early += r1.loss_curve[i];
        late += r1.loss_curve[35 + i];
    }
    CHECK(late < early);
}
