// SPDX-License-Identifier: Apache-2.0
//
// Low-rank adapter baseline: rank-r additive factors on every attention and
// FFN projection, trained by the same chunk loop as the memory.
#pragma once

#include <cstdint>
#include <vector>

#include "locas/attachments.hpp"
#include "locas/model.hpp"

namespace locas {

// down ~ N(0, 1/in), up = 0, so the attached model starts equal to the
// backbone. Throws ShapeError for r = 0.
LowRankAdapter lowrank_baseline_attach(const Backbone& backbone, std::size_t r, std::uint64_t seed);

std::vector<Matrix*> parameters(LowRankAdapter& adapter);
std::vector<const Matrix*> parameters(const LowRankAdapter& adapter);

// Number of scalars actually allocated.
std::size_t allocated_scalars(const LowRankAdapter& adapter);

}  // namespace locas
