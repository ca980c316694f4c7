// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "image.hpp"

namespace milr {

/// Unit optical-density vectors for the hematoxylin / DAB / residual stains.
struct StainVectors {
  Eigen::Vector3d hematoxylin;
  Eigen::Vector3d dab;
  Eigen::Vector3d residual;

  /// Standard H-DAB constants; residual is the normalized cross product.
  static StainVectors hdab_default();
  static StainVectors from_raw(const Eigen::Vector3d &h,
                               const Eigen::Vector3d &dab);

  /// Columns are the stain vectors (rows are R, G, B).
  Eigen::Matrix3d matrix() const;
};

/// od_c = -log10(max(I_c, 1) / 255).
Eigen::Vector3d rgb_to_od(Rgb pixel) noexcept;

/// Inverse of rgb_to_od up to rounding; OD below zero saturates at white.
Rgb od_to_rgb(const Eigen::Vector3d &od) noexcept;

/// Per-pixel stain concentrations, one raster per stain.
struct StainChannels {
  int width = 0;
  int height = 0;
  std::vector<double> hematoxylin;
  std::vector<double> dab;
  std::vector<double> residual;
};

/// Stain concentrations c solving OD = M c for one OD vector.
Eigen::Vector3d unmix_od(const Eigen::Vector3d &od, const StainVectors &v);

/// Solves OD = M c for every pixel. Values are not clipped.
StainChannels deconvolve_hdab(const RgbImage &patch, const StainVectors &v);

struct FeatureConfig {
  int patch_size = 32;
  double dab_positive_od = 0.15;
  /// Pixels with luminance at or below this count as tissue.
  double tissue_luminance_max = 220.0;
  StainVectors stains = StainVectors::hdab_default();
};

inline constexpr int kHandcraftedDim = 27;

/// Layout, in order:
///   [0..5]   mean, std of H-OD, DAB-OD, residual-OD
///   [6]      fraction of pixels with DAB-OD >= dab_positive_od
///   [7..14]  8-bin histogram of DAB-OD clipped to [0, 2]
///   [15..22] 8-bin histogram of H-OD clipped to [0, 2]
///   [23..24] mean, std of luminance gradient magnitude
///   [25..26] tissue pixel fraction, mean HSV saturation
std::array<double, kHandcraftedDim>
extract_handcrafted(const RgbImage &patch, const FeatureConfig &cfg);

// ---------------------------------------------------------------------------
// Feature files

struct FeatureRowIndex {
  std::string slide_id;
  int grid_x = 0;
  int grid_y = 0;
  int patch_x = 0;
  int patch_y = 0;
  friend bool operator==(const FeatureRowIndex &,
                         const FeatureRowIndex &) = default;
};

struct FeatureMatrix {
  std::uint32_t n = 0;
  std::uint32_t d = 0;
  std::vector<float> values; // row-major n*d
  std::vector<FeatureRowIndex> index;

  const float *row(std::size_t i) const { return values.data() + i * d; }
};

/// Binary layout: "MILF", u32 version = 1, u32 n, u32 d, then n*d float32,
/// all little-endian. The row index goes to `<stem>.index.json` next to it.
void write_features(const FeatureMatrix &m, const std::filesystem::path &path);
FeatureMatrix read_features(const std::filesystem::path &path);

std::filesystem::path feature_index_path(const std::filesystem::path &path);

} // namespace milr
