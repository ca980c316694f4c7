// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "image.hpp"

namespace milr {

struct SlideImage {
  std::string slide_id;
  RgbImage pixels;

  int width() const noexcept { return pixels.width(); }
  int height() const noexcept { return pixels.height(); }
};

struct TissueMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits; // 1 = tissue
  int threshold_used = 0;

  bool at(int x, int y) const {
    return bits[static_cast<std::size_t>(y) * width + x] != 0;
  }
};

enum class TumorLabel { Tumor, NonTumor };

const char *tumor_label_name(TumorLabel label);
TumorLabel parse_tumor_label(const std::string &s);

struct TileRecord {
  std::string slide_id;
  int grid_x = 0;
  int grid_y = 0;
  int origin_x = 0;
  int origin_y = 0;
  int tile_size = 0;
  double tissue_fraction = 0.0;
  std::optional<TumorLabel> tumor_label;
  /// 0 for original tiles; augmented tiles count up from 1.
  int aug_id = 0;
  Dihedral transform = Dihedral::Identity;
  /// Tumor probability recorded by the tumor filter, when it has run.
  std::optional<double> tumor_prob;

  bool augmented() const noexcept { return aug_id != 0; }
};

/// Otsu threshold over a 256-bin histogram. Class 0 is levels <= t; the
/// smallest t maximizing the between-class variance is returned.
int otsu_threshold(std::span<const std::uint64_t, 256> histogram);

/// L = round(0.299 R + 0.587 G + 0.114 B).
std::uint8_t luminance(Rgb c) noexcept;

std::array<std::uint64_t, 256> luminance_histogram(const RgbImage &image);

/// Tissue is the dark side of the Otsu threshold. `threshold_override`
/// replaces the computed threshold when set.
TissueMask segment_tissue(const SlideImage &slide,
                          std::optional<int> threshold_override = {});

/// Row-major tile grid anchored at the origin; tiles below
/// `min_tissue_frac` are dropped.
std::vector<TileRecord> tile_slide(const SlideImage &slide,
                                   const TissueMask &mask, int tile_size,
                                   double min_tissue_frac = 0.05);

/// Tile raster padded with white at the slide edge, with the tile's
/// dihedral transform applied.
RgbImage extract_tile(const RgbImage &slide, const TileRecord &tile);

// ---------------------------------------------------------------------------
// Cohort manifest

enum class Response { Responder, NonResponder };
enum class SplitTag { Train, Test };

struct PatientEntry {
  std::string id;
  Response response = Response::NonResponder;
  std::vector<std::string> slides; // relative PNG paths
  SplitTag split = SplitTag::Train;

  friend bool operator==(const PatientEntry &, const PatientEntry &) = default;
};

struct CohortManifest {
  int version = 1;
  std::vector<PatientEntry> patients;

  friend bool operator==(const CohortManifest &,
                         const CohortManifest &) = default;
};

inline constexpr const char *kCohortFile = "cohort.json";

CohortManifest parse_cohort_json(const std::string &text);
std::string cohort_to_json(const CohortManifest &manifest);

/// Reads `<dir>/cohort.json` and checks every slide path exists.
CohortManifest read_cohort(const std::filesystem::path &dir);
void write_cohort(const CohortManifest &manifest,
                  const std::filesystem::path &dir);

/// Slide id is the file stem of its path.
std::string slide_id_from_path(const std::string &relative_path);

SlideImage load_slide(const std::filesystem::path &cohort_dir,
                      const std::string &relative_path);

} // namespace milr
