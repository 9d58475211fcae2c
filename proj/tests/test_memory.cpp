// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <random>

#include "doctest.h"
#include "locas/errors.hpp"
#include "locas/memory.hpp"

using namespace locas;

namespace {

ModelConfig small_config(FfnKind kind) {
    ModelConfig c;
    c.layers = 2;
    c.hidden = 16;
    c.intermediate = 24;
    c.heads = 2;
    c.max_seq = 48;
    c.ffn_kind = kind;
    return c;
}

std::vector<int> random_tokens(std::size_t n, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> dist(0, 255);
    std::vector<int> t(n);
    for (int& v : t) v = dist(rng);
    return t;
}

Matrix random_matrix(std::size_t r, std::size_t c, double sd, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, sd);
    Matrix m(r, c);
    for (double& v : m.data()) v = dist(rng);
    return m;
}

GluMemory topk_memory(const Backbone& b, const std::vector<int>& tokens, std::size_t r) {
    const auto pass = forward(b, tokens);
    GluMemory mem = empty_glu_memory(b.config);
    for (std::size_t l = 0; l < mem.layers.size(); ++l) {
        mem.layers[l] = glu_init_from_backbone(b.weights.layers[l], activation_importance(pass.trace.ffn_intermediate[l]),
                                               r, InitStrategy::topk, 0);
    }
    return mem;
}

}  // namespace

TEST_CASE("init strategy names round-trip") {
    for (auto s : {InitStrategy::topk, InitStrategy::bottomk, InitStrategy::random_selection, InitStrategy::gaussian,
                   InitStrategy::normalized_activation}) {
        CHECK(parse_init_strategy(to_string(s)) == s);
    }
    CHECK_THROWS_AS(parse_init_strategy("pca"), ConfigError);
}

TEST_CASE("mlp_forward examples") {
    MlpMemoryLayer empty{Matrix(0, 2), Matrix(0, 2)};
    CHECK(mlp_forward(empty, Vector{1.0, 2.0}) == Vector{0.0, 0.0});

    MlpMemoryLayer one{Matrix(0, 2), Matrix(0, 2)};
    one.key.append_row(Vector{1.0, 0.0});
    one.value.append_row(Vector{0.5, -3.0});
    CHECK(mlp_forward(one, Vector{-1.0, 7.0}) == Vector{0.0, 0.0});
    CHECK(mlp_forward(one, Vector{2.0, 7.0}) == Vector{1.0, -6.0});
    CHECK_THROWS_AS(mlp_forward(one, Vector{1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("glu_forward examples") {
    GluMemoryLayer l{Matrix(1, 1), Matrix(1, 1), Matrix(1, 1), 1.0, {}};
    l.gate(0, 0) = 1.0;
    l.key(0, 0) = 1.0;
    // V = 0.
    CHECK(glu_forward(l, Vector{1.0}) == Vector{0.0});
    l.value(0, 0) = 1.0;
    CHECK(glu_forward(l, Vector{1.0})[0] == doctest::Approx(0.7310585786300049).epsilon(1e-15));

    GluMemoryLayer g{Matrix(2, 2), Matrix(2, 2), Matrix(2, 2), 1.0, {}};
    g.gate(0, 1) = 1.0;  // orthogonal to the input below: SiLU(0) = 0 closes the slot
    g.gate(1, 0) = -2.0;
    g.key(0, 0) = 2.0;
    g.key(1, 0) = -1.0;
    g.value(0, 0) = 1.0;
    g.value(1, 1) = 3.0;
    const Vector out = glu_forward(g, Vector{1.5, 0.0});
    CHECK(out[0] == 0.0);
    // SiLU(-3) = -3/(1+e^3) = -0.14227761953270035; key logit -1.5.
    CHECK(out[1] == doctest::Approx(3.0 * -0.14227761953270035 * -1.5).epsilon(1e-14));
    CHECK_THROWS_AS(glu_forward(g, Vector{1.0}), ShapeError);
}

TEST_CASE("mlp_append_slot contract") {
    std::mt19937_64 rng(3);
    MlpMemory mem;
    mem.epsilon = 0.05;
    mem.layers.assign(3, MlpMemoryLayer{Matrix(0, 4), Matrix(0, 4)});
    LayerVectors acts, grads;
    for (int i = 0; i < 3; ++i) {
        const Matrix a = random_matrix(1, 4, 1.0, rng);
        const Matrix g = random_matrix(1, 4, 0.3, rng);
        acts.emplace_back(a.data().begin(), a.data().end());
        grads.emplace_back(g.data().begin(), g.data().end());
    }
    mlp_append_slot(mem, acts, grads);
    CHECK(mem.width() == 1);
    const LayerVectors gn = global_normalize(grads);
    for (int i = 0; i < 3; ++i) {
        const Vector out = mlp_forward(mem.layers[i], acts[i]);
        const double scale = mem.epsilon * l2_norm(acts[i]);
        for (int c = 0; c < 4; ++c) CHECK(std::abs(out[c] - scale * gn[i][c]) < 1e-10);
        CHECK(l2_norm(mem.layers[i].key.row(0)) == doctest::Approx(1.0).epsilon(1e-14));

        Vector opposite = acts[i];
        for (double& v : opposite) v = -v;
        CHECK(mlp_forward(mem.layers[i], opposite) == Vector(4, 0.0));
    }

    SUBCASE("degenerate inputs leave the memory unchanged") {
        LayerVectors zeros(3, Vector(4, 0.0));
        CHECK_THROWS_AS(mlp_append_slot(mem, acts, zeros), DegenerateGradient);
        LayerVectors bad_acts = acts;
        bad_acts[2] = Vector(4, 0.0);
        CHECK_THROWS_AS(mlp_append_slot(mem, bad_acts, grads), DegenerateActivation);
        CHECK(mem.width() == 1);
        CHECK(mem.layers[0].key.rows() == 1);
    }
}

TEST_CASE("activation_importance examples") {
    Matrix m(2, 3);
    m(0, 1) = 1.0;
    m(1, 1) = -3.0;
    m(0, 2) = -0.5;
    const Vector a = activation_importance(m);
    CHECK(a == Vector{0.0, 2.0, 0.25});
    Matrix one(1, 2);
    one(0, 0) = -4.0;
    one(0, 1) = 2.0;
    CHECK(activation_importance(one) == Vector{4.0, 2.0});
    CHECK_THROWS_AS(activation_importance(Matrix(0, 3)), ShapeError);
}

TEST_CASE("dimension selection") {
    const Vector alpha{3.0, 1.0, 2.0};
    using V = std::vector<std::size_t>;
    CHECK(select_dimensions(alpha, 2, InitStrategy::topk, 0) == V{0, 2});
    CHECK(select_dimensions(alpha, 2, InitStrategy::bottomk, 0) == V{1, 2});
    CHECK(select_dimensions(Vector{1.0, 1.0, 1.0}, 2, InitStrategy::topk, 0) == V{0, 1});
    CHECK(select_dimensions(Vector{1.0, 1.0, 1.0}, 2, InitStrategy::bottomk, 0) == V{0, 1});
    CHECK_THROWS_AS(select_dimensions(alpha, 4, InitStrategy::topk, 0), CapacityError);
    CHECK(select_dimensions(alpha, 3, InitStrategy::topk, 0) == V{0, 1, 2});

    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(0.0, 5.0);
    for (int trial = 0; trial < 50; ++trial) {
        Vector a(40);
        for (double& v : a) v = u(rng);
        Vector scaled = a;
        for (double& v : scaled) v *= 123.5;
        for (auto s : {InitStrategy::topk, InitStrategy::bottomk}) {
            CHECK(select_dimensions(a, 7, s, 0) == select_dimensions(scaled, 7, s, 0));
        }
    }
    const V r1 = select_dimensions(Vector(50, 1.0), 10, InitStrategy::random_selection, 4);
    CHECK(r1 == select_dimensions(Vector(50, 1.0), 10, InitStrategy::random_selection, 4));
    CHECK(std::adjacent_find(r1.begin(), r1.end()) == r1.end());
    CHECK(r1.size() == 10);
}

TEST_CASE("output scale") {
    Matrix w(4, 3);
    for (std::size_t j = 0; j < 4; ++j) w(j, j % 3) = (j % 2 == 0) ? 1.0 : -1.0;
    CHECK(output_scale(w, 4) == 0.25);
    Matrix single(1, 2);
    single(0, 0) = 3.0;
    CHECK(output_scale(single, 1) == 3.0);
    std::mt19937_64 rng(1);
    const Matrix rnd = random_matrix(10, 6, 1.0, rng);
    CHECK(output_scale(rnd, 8) == output_scale(rnd, 4) / 2.0);
    CHECK_THROWS_AS(output_scale(w, 0), CapacityError);
}

TEST_CASE("clipping examples") {
    GluMemory mem;
    mem.layers.push_back(GluMemoryLayer{Matrix(1, 2), Matrix(1, 2), Matrix(1, 2), 1.0, {}});
    mem.layers[0].gate(0, 0) = 2.0;  // norm 2
    mem.layers[0].key(0, 0) = 0.3;
    mem.layers[0].key(0, 1) = 0.4;  // norm 0.5
    CHECK(clip_weight_norms(mem) == 1);
    CHECK(mem.layers[0].gate(0, 0) == 1.0);
    CHECK(mem.layers[0].gate(0, 1) == 0.0);
    CHECK(mem.layers[0].key(0, 0) == 0.3);
    CHECK(mem.layers[0].key(0, 1) == 0.4);
    CHECK(mem.layers[0].value(0, 0) == 0.0);
    const GluMemory once = mem;
    CHECK(clip_weight_norms(mem) == 0);
    CHECK(mem.layers[0].gate == once.layers[0].gate);
    CHECK(max_slot_norm(mem) == 1.0);
}

TEST_CASE("glu init from backbone") {
    const Backbone b = init_backbone(small_config(FfnKind::glu), 5);
    const auto& ffn = b.weights.layers[0];
    Vector alpha(24);
    for (std::size_t j = 0; j < alpha.size(); ++j) alpha[j] = static_cast<double>((j * 7) % 24);

    const GluMemoryLayer l = glu_init_from_backbone(ffn, alpha, 4, InitStrategy::topk, 0);
    CHECK(l.selection == std::vector<std::size_t>{3, 10, 17, 20});
    CHECK(l.tau == output_scale(ffn.w_value, 4));
    for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t j = l.selection[k];
        const double n = l2_norm(ffn.w_key.row(j));
        for (std::size_t c = 0; c < 16; ++c) CHECK(l.key(k, c) == doctest::Approx(ffn.w_key(j, c) / n));
        CHECK(l2_norm(l.gate.row(k)) == doctest::Approx(1.0));
    }
    CHECK(frobenius_norm(l.value) == 0.0);

    const GluMemoryLayer g1 = glu_init_from_backbone(ffn, alpha, 4, InitStrategy::gaussian, 8);
    const GluMemoryLayer g2 = glu_init_from_backbone(ffn, alpha, 4, InitStrategy::gaussian, 8);
    CHECK(g1.gate == g2.gate);
    CHECK(g1.selection.empty());

    CHECK_NOTHROW(glu_init_from_backbone(ffn, alpha, 24, InitStrategy::topk, 0));
    CHECK_THROWS_AS(glu_init_from_backbone(ffn, alpha, 25, InitStrategy::topk, 0), CapacityError);

    const Backbone mlp = init_backbone(small_config(FfnKind::mlp), 5);
    CHECK_THROWS_AS(glu_init_from_backbone(mlp.weights.layers[0], alpha, 4, InitStrategy::topk, 0), ShapeError);
}

TEST_CASE("zero-initialized memory leaves logits identical") {
    std::mt19937_64 rng(17);
    const Backbone b = init_backbone(small_config(FfnKind::glu), 2);
    const auto tokens = random_tokens(20, rng);
    for (auto s : {InitStrategy::topk, InitStrategy::bottomk, InitStrategy::random_selection, InitStrategy::gaussian}) {
        const auto pass = forward(b, tokens);
        GluMemory mem = empty_glu_memory(b.config);
        for (std::size_t l = 0; l < 2; ++l) {
            mem.layers[l] = glu_init_from_backbone(b.weights.layers[l],
                                                   activation_importance(pass.trace.ffn_intermediate[l]), 6, s, l);
        }
        CHECK(combined_forward(b, mem, tokens).logits == pass.logits);
    }
    const Backbone m = init_backbone(small_config(FfnKind::mlp), 2);
    CHECK(combined_forward(m, empty_mlp_memory(m.config), tokens).logits == forward(m, tokens).logits);

    // τ = 0 hides any memory contents.
    GluMemory mem = topk_memory(b, tokens, 4);
    for (auto& l : mem.layers) {
        l.value = random_matrix(4, 16, 1.0, rng);
        l.tau = 0.0;
    }
    CHECK(combined_forward(b, mem, tokens).logits == forward(b, tokens).logits);
}

TEST_CASE("memory gradients match finite differences") {
    std::mt19937_64 rng(23);
    for (auto kind : {FfnKind::glu, FfnKind::mlp}) {
        const Backbone b = init_backbone(small_config(kind), 4);
        const auto tokens = random_tokens(12, rng);
        const auto targets = shifted_targets(tokens);
        GluMemory glu = empty_glu_memory(b.config);
        MlpMemory mlp = empty_mlp_memory(b.config);
        Attachments att;
        for (std::size_t l = 0; l < 2; ++l) {
            if (kind == FfnKind::glu) {
                glu.layers[l] = GluMemoryLayer{random_matrix(5, 16, 0.3, rng), random_matrix(5, 16, 0.3, rng),
                                               random_matrix(5, 16, 0.3, rng), 0.7, {}};
            } else {
                mlp.layers[l] = MlpMemoryLayer{random_matrix(5, 16, 0.3, rng), random_matrix(5, 16, 0.3, rng)};
            }
        }
        if (kind == FfnKind::glu) att.glu_memory = &glu; else att.mlp_memory = &mlp;
        const auto pass = forward(b, tokens, att);
        const Gradients g = backward(b, att, pass, nll_gradient(pass.logits, targets, 1.0), {.memory = true});
        auto params = kind == FfnKind::glu ? parameters(glu) : parameters(mlp);
        auto grads = kind == FfnKind::glu ? parameters(*g.glu_memory) : parameters(*g.mlp_memory);
        const double h = 1e-5;
        double worst = 0.0;
        for (std::size_t p = 0; p < params.size(); ++p) {
            for (std::size_t idx = 0; idx < params[p]->size(); idx += 7) {
                double& w = params[p]->data()[idx];
                const double keep = w;
                w = keep + h;
                const double up = lm_loss(forward(b, tokens, att).logits, targets);
                w = keep - h;
                const double down = lm_loss(forward(b, tokens, att).logits, targets);
                w = keep;
                const double n = static_cast<double>(tokens.size() - 1);
                const double fd = (up - down) / (2 * h) * n;
                const double an = grads[p]->data()[idx];
                worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-7}));
            }
        }
        CHECK(worst < 1e-5);
    }
}

TEST_CASE("memory_grad_step contract") {
    std::mt19937_64 rng(29);
    const Backbone b = init_backbone(small_config(FfnKind::glu), 6);
    const auto before = checksum(b.weights);
    const auto tokens = random_tokens(24, rng);
    const auto targets = shifted_targets(tokens);
    GluMemory mem = topk_memory(b, tokens, 6);

    SUBCASE("lr = 0 changes nothing") {
        const GluMemory keep = mem;
        const Vector hist = memory_grad_step(b, mem, tokens, targets, {.lr = 0.0, .steps = 3});
        CHECK(hist.size() == 3);
        CHECK(hist[0] == hist[1]);
        CHECK(hist[1] == hist[2]);
        for (std::size_t l = 0; l < 2; ++l) {
            CHECK(mem.layers[l].gate == keep.layers[l].gate);
            CHECK(mem.layers[l].key == keep.layers[l].key);
            CHECK(mem.layers[l].value == keep.layers[l].value);
        }
    }
    SUBCASE("a small step on a repeated-token chunk lowers its NLL") {
        const std::vector<int> repeated(24, 'a');
        const auto rt = shifted_targets(repeated);
        GluMemory rm = topk_memory(b, repeated, 6);
        for (auto& l : rm.layers) l.tau = 1.0;
        const double start = lm_loss(combined_forward(b, rm, repeated).logits, rt);
        memory_grad_step(b, rm, repeated, rt, {.lr = 0.05, .steps = 1});
        CHECK(lm_loss(combined_forward(b, rm, repeated).logits, rt) < start);
    }
    SUBCASE("clipping bound holds after large steps") {
        for (auto& l : mem.layers) l.tau = 1.0;
        memory_grad_step(b, mem, tokens, targets, {.lr = 50.0, .steps = 5});
        CHECK(max_slot_norm(mem) <= 1.0 + 1e-9);
        CHECK(clip_weight_norms(mem) == 0);
    }
    SUBCASE("mlp memory") {
        MlpMemory m = empty_mlp_memory(b.config);
        for (auto& l : m.layers) l = MlpMemoryLayer{random_matrix(4, 16, 1.0, rng), random_matrix(4, 16, 1.0, rng)};
        memory_grad_step(b, m, tokens, targets, {.lr = 1.0, .steps = 2, .optimizer = OptimizerKind::adam});
        CHECK(max_slot_norm(m) <= 1.0 + 1e-9);
    }
    CHECK_THROWS_AS(memory_grad_step(b, mem, tokens, targets, {.lr = 0.1, .steps = 0}), ConfigError);
    CHECK(checksum(b.weights) == before);
}

TEST_CASE("normalized-activation init follows the append rule") {
    std::mt19937_64 rng(31);
    const Backbone b = init_backbone(small_config(FfnKind::glu), 7);
    std::vector<LayerVectors> acts, grads;
    for (int k = 0; k < 3; ++k) {
        LayerVectors a, g;
        for (int l = 0; l < 2; ++l) {
            const Matrix x = random_matrix(1, 16, 1.0, rng);
            const Matrix y = random_matrix(1, 16, 1.0, rng);
            a.emplace_back(x.data().begin(), x.data().end());
            g.emplace_back(y.data().begin(), y.data().end());
        }
        acts.push_back(a);
        grads.push_back(g);
    }
    const GluMemory mem = glu_init_from_activations(b, acts, grads, 0.1);
    CHECK(mem.width() == 3);
    for (std::size_t l = 0; l < 2; ++l) {
        CHECK(mem.layers[l].gate == mem.layers[l].key);
        CHECK(l2_norm(mem.layers[l].key.row(1)) == doctest::Approx(1.0));
        const LayerVectors gn = global_normalize(grads[2]);
        for (std::size_t c = 0; c < 16; ++c) CHECK(mem.layers[l].value(2, c) == doctest::Approx(0.1 * gn[l][c]));
        CHECK(mem.layers[l].tau == output_scale(b.weights.layers[l].w_value, 3));
    }
}
