// SPDX-License-Identifier: Apache-2.0
#include "locas/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "locas/errors.hpp"
#include "locas/optim.hpp"
#include "locas/transformer.hpp"

namespace locas {

namespace {

double schedule(const TrainOptions& o, int step) {
    if (step < o.warmup) {
        return o.lr * static_cast<double>(step + 1) / static_cast<double>(o.warmup);
    }
    const double span = std::max(1, o.steps - o.warmup);
    const double progress = std::min(1.0, static_cast<double>(step - o.warmup) / span);
    const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    return o.lr * (o.min_lr_ratio + (1.0 - o.min_lr_ratio) * cosine);
}

}  // namespace

TrainResult train_tiny_backbone(const Corpus& corpus, const ModelConfig& config, const TrainOptions& options) {
    if (corpus.empty()) {
        throw ConfigError("train_tiny_backbone: corpus has no documents");
    }
    if (options.seq_len < 2 || options.seq_len > config.max_seq) {
        throw ConfigError("train_tiny_backbone: seq_len must be in [2, max_seq]");
    }
    std::vector<std::size_t> usable;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        if (corpus[i].size() >= 2) {
            usable.push_back(i);
        }
    }
    if (usable.empty()) {
        throw ConfigError("train_tiny_backbone: every document is shorter than two tokens");
    }

    TrainResult result{init_backbone(config, options.seed), {}};
    Backbone& model = result.backbone;
    std::mt19937_64 rng(options.seed ^ 0x9E3779B97F4A7C15ULL);
    Optimizer adam(OptimizerKind::adam, options.beta1, options.beta2);

    std::vector<Matrix*> params;
    for_each_tensor(model.weights, [&](const std::string&, Matrix& m) { params.push_back(&m); });

    for (int step = 0; step < options.steps; ++step) {
        BackboneWeights grad = zeros_like(config);
        double loss = 0.0;
        for (int b = 0; b < options.batch; ++b) {
            const auto& doc = corpus[usable[std::uniform_int_distribution<std::size_t>(0, usable.size() - 1)(rng)]];
            const std::size_t len = std::min<std::size_t>(doc.size(), static_cast<std::size_t>(options.seq_len));
            const std::size_t start =
                std::uniform_int_distribution<std::size_t>(0, doc.size() - len)(rng);
            const std::span<const int> window(doc.data() + start, len);
            const ForwardResult pass = forward(model, window);
            const auto targets = shifted_targets(window);
            loss += lm_loss(pass.logits, targets) / options.batch;
            const double weight = 1.0 / (static_cast<double>(len - 1) * options.batch);
            const Gradients g = backward(model, {}, pass, nll_gradient(pass.logits, targets, weight),
                                         {.backbone = true});
            std::vector<Matrix*> dst;
            for_each_tensor(grad, [&](const std::string&, Matrix& m) { dst.push_back(&m); });
            std::size_t i = 0;
            for_each_tensor(*g.backbone, [&](const std::string&, const Matrix& m) { add_inplace(*dst[i++], m); });
        }
        if (!std::isfinite(loss)) {
            throw NumericalError("train_tiny_backbone: loss diverged at step " + std::to_string(step));
        }

        std::vector<const Matrix*> grads;
        double sq = 0.0;
        for_each_tensor(std::as_const(grad), [&](const std::string&, const Matrix& m) {
            grads.push_back(&m);
            sq += dot(m.data(), m.data());
        });
        const double norm = std::sqrt(sq);
        if (options.grad_clip > 0.0 && norm > options.grad_clip) {
            for_each_tensor(grad, [&](const std::string&, Matrix& m) { scale_inplace(m, options.grad_clip / norm); });
        }
        adam.step(params, grads, schedule(options, step));
        result.loss_curve.push_back(loss);
        if (options.on_step) {
            options.on_step(step, loss);
        }
    }
    return result;
}

}  // namespace locas
