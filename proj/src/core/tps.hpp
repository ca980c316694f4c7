// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include "image.hpp"
#include "stain.hpp"

namespace milr {

struct TpsConfig {
  StainVectors stains = StainVectors::hdab_default();
  /// A pixel is nuclear if its H-OD or DAB-OD reaches these levels.
  double nucleus_h_od = 0.5;
  double dab_positive_od = 0.15;
  int min_nucleus_area = 20;
};

struct TpsResult {
  double tps = 0.0;
  long cells = 0;
  long positive = 0;
};

/// Tumor proportion score: nuclei are 4-connected components of nuclear
/// pixels inside the tumor mask with at least min_nucleus_area pixels; a
/// nucleus is positive when its mean DAB-OD reaches dab_positive_od.
TpsResult tps_estimate(const RgbImage &slide, const GrayImage &tumor_mask,
                       const TpsConfig &cfg = {});

} // namespace milr
