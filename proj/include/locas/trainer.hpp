// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale pretraining loop for the backbone: Adam with linear warmup and
// cosine decay on random windows drawn from the corpus.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "locas/model.hpp"

namespace locas {

using Corpus = std::vector<std::vector<int>>;

struct TrainOptions {
    int steps = 2000;
    double lr = 3e-3;
    std::uint64_t seed = 0;
    int seq_len = 128;
    int batch = 4;
    int warmup = 100;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double grad_clip = 1.0;
    double min_lr_ratio = 0.1;
    // Called after every step with (step, loss).
    std::function<void(int, double)> on_step;
};

struct TrainResult {
    Backbone backbone;
    Vector loss_curve;  // mean training NLL per step
};

// Throws NumericalError naming the step if the loss becomes non-finite.
TrainResult train_tiny_backbone(const Corpus& corpus, const ModelConfig& config, const TrainOptions& options);

}  // namespace locas
