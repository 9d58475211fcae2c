// SPDX-License-Identifier: Apache-2.0
#include "locas/adapter.hpp"

#include <cmath>
#include <random>

#include "locas/errors.hpp"

namespace locas {

namespace {

LinearAdapter make(std::size_t in, std::size_t out, std::size_t r, std::mt19937_64& rng) {
    LinearAdapter a{Matrix(r, in), Matrix(out, r)};
    std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (double& v : a.down.data()) v = dist(rng);
    return a;
}

template <class Adapter, class Fn>
void each_linear(Adapter& adapter, Fn&& fn) {
    for (auto& l : adapter.layers) {
        for (auto* f : {&l.q, &l.k, &l.v, &l.o, &l.gate, &l.key, &l.value}) {
            if (!f->empty()) fn(*f);
        }
    }
}

}  // namespace

LowRankAdapter lowrank_baseline_attach(const Backbone& backbone, std::size_t r, std::uint64_t seed) {
    if (r == 0) {
        throw ShapeError("lowrank adapter rank must be >= 1");
    }
    const auto& cfg = backbone.config;
    const auto d = static_cast<std::size_t>(cfg.hidden);
    const auto m = static_cast<std::size_t>(cfg.intermediate);
    std::mt19937_64 rng(seed);
    LowRankAdapter adapter;
    adapter.rank = r;
    for (int i = 0; i < cfg.layers; ++i) {
        AdapterLayer l;
        l.q = make(d, d, r, rng);
        l.k = make(d, d, r, rng);
        l.v = make(d, d, r, rng);
        l.o = make(d, d, r, rng);
        if (cfg.ffn_kind == FfnKind::glu) {
            l.gate = make(d, m, r, rng);
        }
        l.key = make(d, m, r, rng);
        l.value = make(m, d, r, rng);
        adapter.layers.push_back(std::move(l));
    }
    return adapter;
}

std::vector<Matrix*> parameters(LowRankAdapter& adapter) {
    std::vector<Matrix*> out;
    each_linear(adapter, [&](LinearAdapter& f) {
        out.push_back(&f.down);
        out.push_back(&f.up);
    });
    return out;
}

std::vector<const Matrix*> parameters(const LowRankAdapter& adapter) {
    std::vector<const Matrix*> out;
    each_linear(adapter, [&](const LinearAdapter& f) {
        out.push_back(&f.down);
        out.push_back(&f.up);
    });
    return out;
}

std::size_t allocated_scalars(const LowRankAdapter& adapter) {
    std::size_t n = 0;
    for (const Matrix* p : parameters(adapter)) n += p->size();
    return n;
}

}  // namespace locas
