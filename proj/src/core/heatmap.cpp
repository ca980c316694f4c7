// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "heatmap.hpp"

#include <cmath>

#include "error.hpp"

namespace milr {

RgbImage render_attention_heatmap(const RgbImage &tile,
                                  const Eigen::VectorXd &attention,
                                  const Eigen::VectorXd &logits, int patch_size) {
  MILR_REQUIRE(patch_size >= 1 && tile.width() % patch_size == 0 &&
                   tile.height() % patch_size == 0,
               ErrorCode::MismatchedGrid, "patch size does not divide the tile");
  const int gx = tile.width() / patch_size, gy = tile.height() / patch_size;
  MILR_REQUIRE(attention.size() == gx * gy && logits.size() == gx * gy,
               ErrorCode::MismatchedGrid,
               "need one weight and one logit per sub-patch (" +
                   std::to_string(gx * gy) + "), got " +
                   std::to_string(attention.size()) + " and " +
                   std::to_string(logits.size()));
  MILR_REQUIRE(std::abs(attention.sum() - 1.0) < 1e-6 && attention.minCoeff() >= 0.0,
               ErrorCode::InvalidArgument, "attention weights must sum to 1");
  const double amax = attention.maxCoeff();
  RgbImage out = tile;
  for (int k = 0; k < gx * gy; ++k) {
    const double b = amax > 0.0 ? attention[k] / amax : 0.0;
    const bool red = logits[k] > 0.0;
    const double or_ = red ? 255.0 * b : 0.0;
    const double ob = red ? 0.0 : 255.0 * b;
    const int px = (k % gx) * patch_size, py = (k / gx) * patch_size;
    for (int y = py; y < py + patch_size; ++y)
      for (int x = px; x < px + patch_size; ++x) {
        const Rgb s = tile.at(x, y);
        auto mix = [](double src, double over) {
          return static_cast<std::uint8_t>(std::lround(0.5 * src + 0.5 * over));
        };
        out.set(x, y, {mix(s.r, or_), mix(s.g, 0.0), mix(s.b, ob)});
      }
  }
  return out;
}

} // namespace milr
