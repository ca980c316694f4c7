// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <Eigen/Dense>

#include "image.hpp"

namespace milr {

/// Overlays one colored square per sub-patch: red where the instance logit
/// is positive, blue otherwise, brightness a_k / max(a), blended at 50%
/// over the tile.
RgbImage render_attention_heatmap(const RgbImage &tile,
                                  const Eigen::VectorXd &attention,
                                  const Eigen::VectorXd &logits, int patch_size);

} // namespace milr
