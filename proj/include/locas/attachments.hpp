// SPDX-License-Identifier: Apache-2.0
//
// Parameter containers for modules that ride alongside the backbone: the two
// sideway memory variants and the low-rank adapter baseline. The operations
// on them live in memory.hpp and adapter.hpp.
#pragma once

#include <cstddef>
#include <vector>

#include "locas/tensor.hpp"

namespace locas {

// Keys and values are stored slot-major: row j of `key` is k_j, row j of
// `value` is v_j. In column notation this is K ∈ ℝ^{d×r}, V ∈ ℝ^{r×d}.
struct MlpMemoryLayer {
    Matrix key;    // r×d
    Matrix value;  // r×d

    std::size_t width() const { return key.rows(); }
};

struct MlpMemory {
    std::vector<MlpMemoryLayer> layers;
    double epsilon = 1e-2;

    std::size_t width() const { return layers.empty() ? 0 : layers.front().width(); }
};

struct GluMemoryLayer {
    Matrix gate;   // r×d
    Matrix key;    // r×d
    Matrix value;  // r×d
    double tau = 0.0;
    // Backbone FFN dimensions the gate/key rows were cloned from.
    std::vector<std::size_t> selection;

    std::size_t width() const { return key.rows(); }
};

struct GluMemory {
    std::vector<GluMemoryLayer> layers;

    std::size_t width() const { return layers.empty() ? 0 : layers.front().width(); }
};

// y = W·x + up·(down·x) for a linear map W (out×in).
struct LinearAdapter {
    Matrix down;  // r×in
    Matrix up;    // out×r, zero at initialization

    bool empty() const { return down.empty(); }
};

struct AdapterLayer {
    LinearAdapter q, k, v, o;
    LinearAdapter gate;  // GLU backbones only
    LinearAdapter key;
    LinearAdapter value;
};

struct LowRankAdapter {
    std::vector<AdapterLayer> layers;
    std::size_t rank = 0;
};

}  // namespace locas
