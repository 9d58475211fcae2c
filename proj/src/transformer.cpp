// SPDX-License-Identifier: Apache-2.0
#include "locas/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "locas/errors.hpp"

namespace locas {

namespace {

using detail::LayerCache;
using detail::LinearCache;

// ----------------------------------------------------------------- rmsnorm

Matrix rmsnorm_forward(const Matrix& x, const Matrix& gain, double eps, Vector& inv_rms) {
    const std::size_t n = x.cols();
    Matrix y(x.rows(), n);
    inv_rms.assign(x.rows(), 0.0);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto xr = x.row(t);
        const double ms = dot(xr, xr) / static_cast<double>(n);
        const double inv = 1.0 / std::sqrt(ms + eps);
        inv_rms[t] = inv;
        auto yr = y.row(t);
        for (std::size_t j = 0; j < n; ++j) {
            yr[j] = xr[j] * inv * gain(0, j);
        }
    }
    return y;
}

Matrix rmsnorm_backward(const Matrix& dy, const Matrix& x, const Vector& inv_rms,
                        const Matrix& gain, Matrix* dgain) {
    const std::size_t n = x.cols();
    Matrix dx(x.rows(), n);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        const auto xr = x.row(t);
        const auto dyr = dy.row(t);
        const double inv = inv_rms[t];
        double proj = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            proj += gain(0, j) * dyr[j] * xr[j];
        }
        const double coeff = inv * inv * inv * proj / static_cast<double>(n);
        auto dxr = dx.row(t);
        for (std::size_t j = 0; j < n; ++j) {
            dxr[j] = inv * gain(0, j) * dyr[j] - coeff * xr[j];
        }
        if (dgain != nullptr) {
            for (std::size_t j = 0; j < n; ++j) {
                (*dgain)(0, j) += dyr[j] * xr[j] * inv;
            }
        }
    }
    return dx;
}

// ------------------------------------------------------------------ linear

// y = x·Wᵀ (+ (x·downᵀ)·upᵀ)
Matrix linear_forward(const Matrix& x, const Matrix& w, const LinearAdapter* ad, LinearCache& cache) {
    Matrix y = matmul_nt(x, w);
    if (ad != nullptr && !ad->empty()) {
        cache.down_out = matmul_nt(x, ad->down);
        add_inplace(y, matmul_nt(cache.down_out, ad->up));
    }
    return y;
}

Matrix linear_backward(const Matrix& dy, const Matrix& x, const Matrix& w, const LinearAdapter* ad,
                       const LinearCache& cache, Matrix* dw, LinearAdapter* dad) {
    Matrix dx = matmul(dy, w);
    if (dw != nullptr) {
        matmul_tn_acc(dy, x, *dw);
    }
    if (ad != nullptr && !ad->empty()) {
        const Matrix d_down_out = matmul(dy, ad->up);
        add_inplace(dx, matmul(d_down_out, ad->down));
        if (dad != nullptr) {
            matmul_tn_acc(dy, cache.down_out, dad->up);
            matmul_tn_acc(d_down_out, x, dad->down);
        }
    }
    return dx;
}

// Down projection stored m×d: y = h·W (+ adapter on the d×m map Wᵀ).
Matrix value_forward(const Matrix& h, const Matrix& w, const LinearAdapter* ad, LinearCache& cache) {
    Matrix y = matmul(h, w);
    if (ad != nullptr && !ad->empty()) {
        cache.down_out = matmul_nt(h, ad->down);
        add_inplace(y, matmul_nt(cache.down_out, ad->up));
    }
    return y;
}

Matrix value_backward(const Matrix& dy, const Matrix& h, const Matrix& w, const LinearAdapter* ad,
                      const LinearCache& cache, Matrix* dw, LinearAdapter* dad) {
    Matrix dh = matmul_nt(dy, w);
    if (dw != nullptr) {
        matmul_tn_acc(h, dy, *dw);
    }
    if (ad != nullptr && !ad->empty()) {
        const Matrix d_down_out = matmul(dy, ad->up);
        add_inplace(dh, matmul(d_down_out, ad->down));
        if (dad != nullptr) {
            matmul_tn_acc(dy, cache.down_out, dad->up);
            matmul_tn_acc(d_down_out, h, dad->down);
        }
    }
    return dh;
}

// ------------------------------------------------------------------ rotary

void apply_rope(Matrix& x, int heads, double base, bool inverse) {
    const std::size_t hd = x.cols() / static_cast<std::size_t>(heads);
    const std::size_t half = hd / 2;
    for (std::size_t t = 0; t < x.rows(); ++t) {
        auto row = x.row(t);
        for (std::size_t i = 0; i < half; ++i) {
            const double freq = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(hd));
            const double angle = static_cast<double>(t) * freq;
            const double c = std::cos(angle);
            const double s = inverse ? -std::sin(angle) : std::sin(angle);
            for (int h = 0; h < heads; ++h) {
                const std::size_t o = static_cast<std::size_t>(h) * hd + 2 * i;
                const double a = row[o];
                const double b = row[o + 1];
                row[o] = a * c - b * s;
                row[o + 1] = a * s + b * c;
            }
        }
    }
}

// --------------------------------------------------------------- attention

Matrix attention_forward(const Matrix& q, const Matrix& k, const Matrix& v, int heads,
                         std::vector<Matrix>& probs) {
    const std::size_t T = q.rows();
    const std::size_t hd = q.cols() / static_cast<std::size_t>(heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    Matrix out(T, q.cols());
    probs.assign(static_cast<std::size_t>(heads), Matrix(T, T));
    Vector scores(T);
    for (std::size_t h = 0; h < static_cast<std::size_t>(heads); ++h) {
        const std::size_t off = h * hd;
        Matrix& p = probs[h];
        for (std::size_t i = 0; i < T; ++i) {
            const double* qi = q.row(i).data() + off;
            double mx = -1e300;
            for (std::size_t j = 0; j <= i; ++j) {
                const double* kj = k.row(j).data() + off;
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) {
                    s += qi[c] * kj[c];
                }
                scores[j] = s * scale;
                mx = std::max(mx, scores[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                scores[j] = std::exp(scores[j] - mx);
                z += scores[j];
            }
            double* oi = out.row(i).data() + off;
            for (std::size_t j = 0; j <= i; ++j) {
                const double pij = scores[j] / z;
                p(i, j) = pij;
                const double* vj = v.row(j).data() + off;
                for (std::size_t c = 0; c < hd; ++c) {
                    oi[c] += pij * vj[c];
                }
            }
        }
    }
    return out;
}

void attention_backward(const Matrix& dout, const Matrix& q, const Matrix& k, const Matrix& v,
                        const std::vector<Matrix>& probs, Matrix& dq, Matrix& dk, Matrix& dv) {
    const std::size_t T = q.rows();
    const std::size_t heads = probs.size();
    const std::size_t hd = q.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    dq = Matrix(T, q.cols());
    dk = Matrix(T, q.cols());
    dv = Matrix(T, q.cols());
    Vector dp(T);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t off = h * hd;
        const Matrix& p = probs[h];
        for (std::size_t i = 0; i < T; ++i) {
            const double* doi = dout.row(i).data() + off;
            double row_dot = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                const double* vj = v.row(j).data() + off;
                double s = 0.0;
                for (std::size_t c = 0; c < hd; ++c) {
                    s += doi[c] * vj[c];
                }
                dp[j] = s;
                row_dot += p(i, j) * s;
                double* dvj = dv.row(j).data() + off;
                const double pij = p(i, j);
                for (std::size_t c = 0; c < hd; ++c) {
                    dvj[c] += pij * doi[c];
                }
            }
            const double* qi = q.row(i).data() + off;
            double* dqi = dq.row(i).data() + off;
            for (std::size_t j = 0; j <= i; ++j) {
                const double ds = p(i, j) * (dp[j] - row_dot) * scale;
                if (ds == 0.0) {
                    continue;
                }
                const double* kj = k.row(j).data() + off;
                double* dkj = dk.row(j).data() + off;
                for (std::size_t c = 0; c < hd; ++c) {
                    dqi[c] += ds * kj[c];
                    dkj[c] += ds * qi[c];
                }
            }
        }
    }
}

// ------------------------------------------------------------------ helpers

void check_memory_shape(std::size_t layers, std::size_t mem_layers, std::size_t d,
                        std::size_t key_cols, std::size_t width, const char* what) {
    if (mem_layers != layers) {
        throw ShapeError(std::string(what) + ": memory has " + std::to_string(mem_layers) +
                         " layers, backbone has " + std::to_string(layers));
    }
    if (width > 0 && key_cols != d) {
        throw ShapeError(std::string(what) + ": memory width " + std::to_string(key_cols) +
                         " != hidden size " + std::to_string(d));
    }
}

Matrix silu_matrix(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y.data()[i] = activate(ActivationKind::silu, x.data()[i]);
    }
    return y;
}

Matrix relu_matrix(const Matrix& x) {
    Matrix y(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
        y.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
    }
    return y;
}

Matrix gated(const Matrix& gate_pre, const Matrix& key_pre) {
    Matrix h = silu_matrix(gate_pre);
    for (std::size_t i = 0; i < h.size(); ++i) {
        h.data()[i] *= key_pre.data()[i];
    }
    return h;
}

// Given dh for h = silu(g) ⊙ k, writes dg and dk.
void gated_backward(const Matrix& dh, const Matrix& gate_pre, const Matrix& key_pre, Matrix& dgate,
                    Matrix& dkey) {
    dgate = Matrix(dh.rows(), dh.cols());
    dkey = Matrix(dh.rows(), dh.cols());
    for (std::size_t i = 0; i < dh.size(); ++i) {
        const double g = gate_pre.data()[i];
        dkey.data()[i] = dh.data()[i] * activate(ActivationKind::silu, g);
        dgate.data()[i] = dh.data()[i] * key_pre.data()[i] * activate_derivative(ActivationKind::silu, g);
    }
}

const LinearAdapter* pick(const AdapterLayer* l, const LinearAdapter AdapterLayer::*member) {
    return l == nullptr ? nullptr : &(l->*member);
}

LinearAdapter* pick(AdapterLayer* l, LinearAdapter AdapterLayer::*member) {
    return l == nullptr ? nullptr : &(l->*member);
}

LowRankAdapter zeros_like(const LowRankAdapter& a) {
    LowRankAdapter z = a;
    for (auto& l : z.layers) {
        for (LinearAdapter* f : {&l.q, &l.k, &l.v, &l.o, &l.gate, &l.key, &l.value}) {
            f->down.set_zero();
            f->up.set_zero();
        }
    }
    return z;
}

}  // namespace

// ----------------------------------------------------------------- forward

ForwardResult forward(const Backbone& backbone, std::span<const int> tokens,
                      const Attachments& attachments) {
    const ModelConfig& cfg = backbone.config;
    const BackboneWeights& w = backbone.weights;
    const std::size_t T = tokens.size();
    const auto L = static_cast<std::size_t>(cfg.layers);
    const auto d = static_cast<std::size_t>(cfg.hidden);
    if (T > static_cast<std::size_t>(cfg.max_seq)) {
        throw ShapeError("forward: sequence length " + std::to_string(T) + " exceeds max_seq " +
                         std::to_string(cfg.max_seq));
    }
    for (int tok : tokens) {
        if (tok < 0 || tok >= cfg.vocab) {
            throw ShapeError("forward: token id " + std::to_string(tok) + " outside vocabulary");
        }
    }
    if (attachments.mlp_memory != nullptr) {
        const auto& m = *attachments.mlp_memory;
        check_memory_shape(L, m.layers.size(), d, m.width() ? m.layers[0].key.cols() : d, m.width(),
                           "mlp memory");
    }
    if (attachments.glu_memory != nullptr) {
        const auto& m = *attachments.glu_memory;
        check_memory_shape(L, m.layers.size(), d, m.width() ? m.layers[0].key.cols() : d, m.width(),
                           "glu memory");
    }
    if (attachments.adapter != nullptr && attachments.adapter->layers.size() != L) {
        throw ShapeError("adapter layer count does not match backbone");
    }
    if (attachments.hidden_offsets != nullptr) {
        if (attachments.hidden_offsets->size() != L) {
            throw ShapeError("hidden offsets layer count does not match backbone");
        }
        for (const auto& off : *attachments.hidden_offsets) {
            if (off.rows() != T || off.cols() != d) {
                throw ShapeError("hidden offset shape does not match T×d");
            }
        }
    }

    ForwardResult res;
    res.tokens.assign(tokens.begin(), tokens.end());
    res.layers.resize(L);
    res.trace.ffn_input.resize(L);
    res.trace.ffn_intermediate.resize(L);

    Matrix x(T, d);
    for (std::size_t t = 0; t < T; ++t) {
        const auto src = w.embedding.row(static_cast<std::size_t>(tokens[t]));
        std::copy(src.begin(), src.end(), x.row(t).begin());
    }

    for (std::size_t li = 0; li < L; ++li) {
        const LayerWeights& lw = w.layers[li];
        LayerCache& c = res.layers[li];
        const AdapterLayer* ad = attachments.adapter ? &attachments.adapter->layers[li] : nullptr;

        c.x_in = x;
        c.attn_normed = rmsnorm_forward(x, lw.attn_norm, cfg.norm_eps, c.attn_inv_rms);
        c.q = linear_forward(c.attn_normed, lw.wq, pick(ad, &AdapterLayer::q), c.q_ad);
        c.k = linear_forward(c.attn_normed, lw.wk, pick(ad, &AdapterLayer::k), c.k_ad);
        c.v = linear_forward(c.attn_normed, lw.wv, pick(ad, &AdapterLayer::v), c.v_ad);
        apply_rope(c.q, cfg.heads, cfg.rope_base, false);
        apply_rope(c.k, cfg.heads, cfg.rope_base, false);
        c.attn_out = attention_forward(c.q, c.k, c.v, cfg.heads, c.probs);
        add_inplace(x, linear_forward(c.attn_out, lw.wo, pick(ad, &AdapterLayer::o), c.o_ad));
        c.x_mid = x;

        Matrix& a = res.trace.ffn_input[li];
        a = rmsnorm_forward(x, lw.ffn_norm, cfg.norm_eps, c.ffn_inv_rms);
        Matrix& h = res.trace.ffn_intermediate[li];
        c.ffn_key_pre = linear_forward(a, lw.w_key, pick(ad, &AdapterLayer::key), c.key_ad);
        if (cfg.ffn_kind == FfnKind::glu) {
            c.ffn_gate_pre = linear_forward(a, lw.w_gate, pick(ad, &AdapterLayer::gate), c.gate_ad);
            h = gated(c.ffn_gate_pre, c.ffn_key_pre);
        } else {
            h = relu_matrix(c.ffn_key_pre);
        }
        Matrix ffn_out = value_forward(h, lw.w_value, pick(ad, &AdapterLayer::value), c.value_ad);

        if (attachments.mlp_memory != nullptr && attachments.mlp_memory->width() > 0) {
            const MlpMemoryLayer& mem = attachments.mlp_memory->layers[li];
            c.mem_key_pre = matmul_nt(a, mem.key);
            c.mem_hidden = relu_matrix(c.mem_key_pre);
            add_inplace(ffn_out, matmul(c.mem_hidden, mem.value));
        }
        if (attachments.glu_memory != nullptr && attachments.glu_memory->width() > 0) {
            const GluMemoryLayer& mem = attachments.glu_memory->layers[li];
            c.mem_key_pre = matmul_nt(a, mem.key);
            c.mem_gate_pre = matmul_nt(a, mem.gate);
            c.mem_hidden = gated(c.mem_gate_pre, c.mem_key_pre);
            add_scaled_inplace(ffn_out, matmul(c.mem_hidden, mem.value), mem.tau);
        }
        add_inplace(x, ffn_out);
        if (attachments.hidden_offsets != nullptr) {
            add_inplace(x, (*attachments.hidden_offsets)[li]);
        }
    }

    res.final_input = x;
    res.final_normed = rmsnorm_forward(x, w.final_norm, cfg.norm_eps, res.final_inv_rms);
    res.logits = matmul_nt(res.final_normed, w.head);
    return res;
}

// ---------------------------------------------------------------- backward

Gradients backward(const Backbone& backbone, const Attachments& attachments,
                   const ForwardResult& pass, const Matrix& dlogits, GradientRequest request) {
    const ModelConfig& cfg = backbone.config;
    const BackboneWeights& w = backbone.weights;
    const std::size_t T = pass.length();
    const auto L = static_cast<std::size_t>(cfg.layers);
    if (dlogits.rows() != T || dlogits.cols() != static_cast<std::size_t>(cfg.vocab)) {
        throw ShapeError("backward: dlogits shape does not match the forward pass");
    }

    Gradients g;
    BackboneWeights* gw = nullptr;
    if (request.backbone) {
        g.backbone = zeros_like(cfg);
        gw = &*g.backbone;
    }
    const bool with_mlp_mem = attachments.mlp_memory != nullptr && attachments.mlp_memory->width() > 0;
    const bool with_glu_mem = attachments.glu_memory != nullptr && attachments.glu_memory->width() > 0;
    if (request.memory && attachments.mlp_memory != nullptr) {
        g.mlp_memory = *attachments.mlp_memory;
        for (auto& l : g.mlp_memory->layers) {
            l.key.set_zero();
            l.value.set_zero();
        }
    }
    if (request.memory && attachments.glu_memory != nullptr) {
        g.glu_memory = *attachments.glu_memory;
        for (auto& l : g.glu_memory->layers) {
            l.gate.set_zero();
            l.key.set_zero();
            l.value.set_zero();
        }
    }
    if (request.adapter && attachments.adapter != nullptr) {
        g.adapter = zeros_like(*attachments.adapter);
    }
    if (request.hidden) {
        g.hidden.resize(L);
    }
    if (T == 0) {
        return g;
    }

    Matrix dx = rmsnorm_backward(matmul(dlogits, w.head), pass.final_input, pass.final_inv_rms,
                                 w.final_norm, gw ? &gw->final_norm : nullptr);
    if (gw != nullptr) {
        matmul_tn_acc(dlogits, pass.final_normed, gw->head);
    }
    const bool full_depth = request.backbone || request.adapter;

    for (std::size_t li = L; li-- > 0;) {
        const LayerWeights& lw = w.layers[li];
        const LayerCache& c = pass.layers[li];
        const Matrix& a = pass.trace.ffn_input[li];
        const AdapterLayer* ad = attachments.adapter ? &attachments.adapter->layers[li] : nullptr;
        AdapterLayer* gad = g.adapter ? &g.adapter->layers[li] : nullptr;
        LayerWeights* glw = gw ? &gw->layers[li] : nullptr;

        if (request.hidden) {
            g.hidden[li] = dx;
        }

        // FFN block: dx is the gradient w.r.t. the FFN (+ memory) output.
        const Matrix& h = pass.trace.ffn_intermediate[li];
        Matrix dh = value_backward(dx, h, lw.w_value, pick(ad, &AdapterLayer::value), c.value_ad,
                                   glw ? &glw->w_value : nullptr, pick(gad, &AdapterLayer::value));
        Matrix da;
        if (cfg.ffn_kind == FfnKind::glu) {
            Matrix dgate;
            Matrix dkey;
            gated_backward(dh, c.ffn_gate_pre, c.ffn_key_pre, dgate, dkey);
            da = linear_backward(dkey, a, lw.w_key, pick(ad, &AdapterLayer::key), c.key_ad,
                                 glw ? &glw->w_key : nullptr, pick(gad, &AdapterLayer::key));
            add_inplace(da, linear_backward(dgate, a, lw.w_gate, pick(ad, &AdapterLayer::gate), c.gate_ad,
                                            glw ? &glw->w_gate : nullptr, pick(gad, &AdapterLayer::gate)));
        } else {
            for (std::size_t i = 0; i < dh.size(); ++i) {
                if (!(c.ffn_key_pre.data()[i] > 0.0)) {
                    dh.data()[i] = 0.0;
                }
            }
            da = linear_backward(dh, a, lw.w_key, pick(ad, &AdapterLayer::key), c.key_ad,
                                 glw ? &glw->w_key : nullptr, pick(gad, &AdapterLayer::key));
        }

        if (with_mlp_mem) {
            const MlpMemoryLayer& mem = attachments.mlp_memory->layers[li];
            Matrix dmh = matmul_nt(dx, mem.value);
            for (std::size_t i = 0; i < dmh.size(); ++i) {
                if (!(c.mem_key_pre.data()[i] > 0.0)) {
                    dmh.data()[i] = 0.0;
                }
            }
            if (g.mlp_memory) {
                auto& gm = g.mlp_memory->layers[li];
                matmul_tn_acc(c.mem_hidden, dx, gm.value);
                matmul_tn_acc(dmh, a, gm.key);
            }
            add_inplace(da, matmul(dmh, mem.key));
        }
        if (with_glu_mem) {
            const GluMemoryLayer& mem = attachments.glu_memory->layers[li];
            Matrix dout = dx;
            scale_inplace(dout, mem.tau);
            const Matrix dmh = matmul_nt(dout, mem.value);
            Matrix dgate;
            Matrix dkey;
            gated_backward(dmh, c.mem_gate_pre, c.mem_key_pre, dgate, dkey);
            if (g.glu_memory) {
                auto& gm = g.glu_memory->layers[li];
                matmul_tn_acc(c.mem_hidden, dout, gm.value);
                matmul_tn_acc(dkey, a, gm.key);
                matmul_tn_acc(dgate, a, gm.gate);
            }
            add_inplace(da, matmul(dkey, mem.key));
            add_inplace(da, matmul(dgate, mem.gate));
        }

        if (li == 0 && !full_depth) {
            break;
        }

        add_inplace(dx, rmsnorm_backward(da, c.x_mid, c.ffn_inv_rms, lw.ffn_norm,
                                         glw ? &glw->ffn_norm : nullptr));

        // Attention block.
        const Matrix d_attn_out = linear_backward(dx, c.attn_out, lw.wo, pick(ad, &AdapterLayer::o), c.o_ad,
                                                  glw ? &glw->wo : nullptr, pick(gad, &AdapterLayer::o));
        Matrix dq;
        Matrix dk;
        Matrix dv;
        attention_backward(d_attn_out, c.q, c.k, c.v, c.probs, dq, dk, dv);
        apply_rope(dq, cfg.heads, cfg.rope_base, true);
        apply_rope(dk, cfg.heads, cfg.rope_base, true);
        Matrix dn = linear_backward(dq, c.attn_normed, lw.wq, pick(ad, &AdapterLayer::q), c.q_ad,
                                    glw ? &glw->wq : nullptr, pick(gad, &AdapterLayer::q));
        add_inplace(dn, linear_backward(dk, c.attn_normed, lw.wk, pick(ad, &AdapterLayer::k), c.k_ad,
                                        glw ? &glw->wk : nullptr, pick(gad, &AdapterLayer::k)));
        add_inplace(dn, linear_backward(dv, c.attn_normed, lw.wv, pick(ad, &AdapterLayer::v), c.v_ad,
                                        glw ? &glw->wv : nullptr, pick(gad, &AdapterLayer::v)));
        add_inplace(dx, rmsnorm_backward(dn, c.x_in, c.attn_inv_rms, lw.attn_norm,
                                         glw ? &glw->attn_norm : nullptr));
    }

    if (gw != nullptr) {
        for (std::size_t t = 0; t < T; ++t) {
            auto dst = gw->embedding.row(static_cast<std::size_t>(pass.tokens[t]));
            const auto src = dx.row(t);
            for (std::size_t j = 0; j < dst.size(); ++j) {
                dst[j] += src[j];
            }
        }
    }
    return g;
}

// -------------------------------------------------------------------- loss

namespace {

double log_sum_exp(std::span<const double> row) {
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) {
        z += std::exp(v - mx);
    }
    return mx + std::log(z);
}

void check_targets(const Matrix& logits, std::span<const int> targets) {
    if (targets.size() != logits.rows()) {
        throw ShapeError("loss: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(logits.rows()) + " logit rows");
    }
    for (int t : targets) {
        if (t >= static_cast<int>(logits.cols())) {
            throw ShapeError("loss: target id outside vocabulary");
        }
    }
}

}  // namespace

Vector position_nll(const Matrix& logits, std::span<const int> targets) {
    check_targets(logits, targets);
    Vector out(logits.rows(), 0.0);
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        if (targets[t] < 0) {
            continue;
        }
        const auto row = logits.row(t);
        out[t] = log_sum_exp(row) - row[static_cast<std::size_t>(targets[t])];
    }
    return out;
}

double lm_loss(const Matrix& logits, std::span<const int> targets) {
    const Vector nll = position_nll(logits, targets);
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < nll.size(); ++t) {
        if (targets[t] >= 0) {
            sum += nll[t];
            ++n;
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

Matrix nll_gradient(const Matrix& logits, std::span<const int> targets, double weight) {
    check_targets(logits, targets);
    Matrix g(logits.rows(), logits.cols());
    for (std::size_t t = 0; t < logits.rows(); ++t) {
        if (targets[t] < 0) {
            continue;
        }
        const auto row = logits.row(t);
        const double lse = log_sum_exp(row);
        auto gr = g.row(t);
        for (std::size_t j = 0; j < row.size(); ++j) {
            gr[j] = weight * std::exp(row[j] - lse);
        }
        gr[static_cast<std::size_t>(targets[t])] -= weight;
    }
    return g;
}

std::vector<int> shifted_targets(std::span<const int> tokens, std::size_t first) {
    std::vector<int> targets(tokens.size(), -1);
    for (std::size_t t = first; t + 1 < tokens.size(); ++t) {
        targets[t] = tokens[t + 1];
    }
    return targets;
}

LayerVectors log_likelihood_hidden_grads(const Backbone& backbone, std::span<const int> tokens,
                                         std::size_t position, const Attachments& attachments) {
    if (position + 1 >= tokens.size()) {
        throw ShapeError("log_likelihood_hidden_grads: position has no next token");
    }
    const auto context = tokens.subspan(0, position + 1);
    const ForwardResult pass = forward(backbone, context, attachments);
    std::vector<int> targets(context.size(), -1);
    targets[position] = tokens[position + 1];
    const Matrix dlogits = nll_gradient(pass.logits, targets, -1.0);
    const Gradients g = backward(backbone, attachments, pass, dlogits, {.hidden = true});
    LayerVectors out;
    out.reserve(g.hidden.size());
    for (const auto& h : g.hidden) {
        const auto r = h.row(position);
        out.emplace_back(r.begin(), r.end());
    }
    return out;
}

}  // namespace locas
