// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "tps.hpp"

#include <cmath>
#include <vector>

#include "error.hpp"

namespace milr {

TpsResult tps_estimate(const RgbImage &slide, const GrayImage &tumor_mask,
                       const TpsConfig &cfg) {
  MILR_REQUIRE(tumor_mask.width == slide.width() &&
                   tumor_mask.height == slide.height(),
               ErrorCode::DimensionMismatch,
               "tumor mask does not match slide dimensions");
  const int w = slide.width(), h = slide.height();
  const std::size_t n = static_cast<std::size_t>(w) * h;
  bool any = false;
  for (std::uint8_t v : tumor_mask.data)
    if (v) {
      any = true;
      break;
    }
  MILR_REQUIRE(any, ErrorCode::NoTumorRegion, "tumor mask is empty");

  const Eigen::Matrix3d inv = cfg.stains.matrix().inverse();
  std::vector<std::uint8_t> nuclear(n, 0);
  std::vector<float> dab(n, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (!tumor_mask.data[i])
        continue;
      const Eigen::Vector3d c = inv * rgb_to_od(slide.at(x, y));
      dab[i] = static_cast<float>(c[1]);
      nuclear[i] = c[0] >= cfg.nucleus_h_od || c[1] >= cfg.dab_positive_od;
    }

  TpsResult r;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < n; ++start) {
    if (nuclear[start] != 1)
      continue;
    nuclear[start] = 2;
    stack.assign(1, start);
    long area = 0;
    double dab_sum = 0.0;
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++area;
      dab_sum += dab[i];
      const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
      const std::size_t nb[4] = {x > 0 ? i - 1 : n, x + 1 < w ? i + 1 : n,
                                 y > 0 ? i - w : n, y + 1 < h ? i + w : n};
      for (std::size_t j : nb)
        if (j < n && nuclear[j] == 1) {
          nuclear[j] = 2;
          stack.push_back(j);
        }
    }
    if (area < cfg.min_nucleus_area)
      continue;
    ++r.cells;
    if (dab_sum / area >= cfg.dab_positive_od)
      ++r.positive;
  }
  MILR_REQUIRE(r.cells > 0, ErrorCode::NoCellsFound,
               "no nuclei found inside the tumor mask");
  r.tps = static_cast<double>(r.positive) / r.cells;
  return r;
}

} // namespace milr
