// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "image.hpp"
#include "slide_io.hpp"

namespace milr {

enum class PatternLink { ReactiveVsConstitutive, TpsOnly, None };
enum class StainPattern { Reactive, Constitutive };

const char *pattern_link_name(PatternLink p);
PatternLink parse_pattern_link(const std::string &s);
const char *stain_pattern_name(StainPattern p);
StainPattern parse_stain_pattern(const std::string &s);

struct SynthConfig {
  int n_patients = 46;
  double responder_fraction = 0.217;
  /// Extra patients tagged split "test"; responders by the same fraction.
  int n_test = 0;
  int slide_size = 1024;
  int tile_size = 128;
  double tps_mean = 0.5;
  double tps_sd = 0.15;
  PatternLink pattern_link = PatternLink::ReactiveVsConstitutive;
  /// Target number of tissue tiles per patient, drawn uniformly.
  std::array<int, 2> tiles_per_patient_range = {10, 40};
  /// A tile is a tumor tile at >= this fraction of tumor pixels among its
  /// tissue pixels.
  double tumor_tile_threshold = 0.3;
  std::uint64_t seed = 7;

  int nucleus_radius = 3;
  int tumor_cell_spacing = 10;
  int stroma_cell_spacing = 20;
};

/// Throws ConfigInconsistent for configs that cannot produce a valid cohort.
void validate(const SynthConfig &cfg);

/// round(n * fraction), rounding half up.
int responder_count(int n, double fraction);

struct PatientSpec {
  std::string patient_id;
  std::string slide_id;
  bool responder = false;
  SplitTag split = SplitTag::Train;
  double target_tps = 0.5;
  StainPattern pattern = StainPattern::Constitutive;
  int target_tissue_tiles = 20;
  std::uint64_t seed = 0;
};

struct CellRecord {
  int x = 0;
  int y = 0;
  bool is_tumor = false;
  bool is_positive = false;
};

struct TileTruth {
  int grid_x = 0;
  int grid_y = 0;
  double tumor_fraction = 0.0;
  bool is_tumor_tile = false;
};

struct GroundTruth {
  std::string slide_id;
  std::string patient_id;
  StainPattern pattern = StainPattern::Constitutive;
  double true_tps = 0.0;
  int tile_size = 0;
  double tumor_tile_threshold = 0.3;
  std::vector<CellRecord> cells;
  std::vector<TileTruth> tiles;
  GrayImage tumor_mask;  // 0/255
  GrayImage tissue_mask; // 0/255

  int tumor_cells() const;
  int positive_tumor_cells() const;
};

/// Tumor-tile labels recomputed from the masks for a tile grid.
std::vector<TileTruth> label_tiles(const GrayImage &tissue,
                                   const GrayImage &tumor, int tile_size,
                                   double threshold);

/// Patient roster with per-patient parameters; deterministic in the seed.
std::vector<PatientSpec> plan_cohort(const SynthConfig &cfg);

std::pair<SlideImage, GroundTruth> generate_slide(const PatientSpec &spec,
                                                  const SynthConfig &cfg);

struct SynthCohort {
  CohortManifest manifest;
  std::vector<PatientSpec> specs;
  std::vector<SlideImage> slides;
  std::vector<GroundTruth> truth;
};

/// In-memory generation; meant for small cohorts and tests.
SynthCohort generate_cohort(const SynthConfig &cfg);

/// Generates and writes the cohort one patient at a time: cohort.json,
/// slides/<id>.png and the <id>.truth.json / <id>.tumor.png /
/// <id>.tissue.png sidecars.
CohortManifest write_synth_cohort(const SynthConfig &cfg,
                                  const std::filesystem::path &dir);

std::string truth_to_json(const GroundTruth &gt);
void write_truth(const GroundTruth &gt, const std::filesystem::path &slide_dir);
/// Reads the sidecars for `slide_id` in `slide_dir`; masks are optional.
GroundTruth read_truth(const std::filesystem::path &slide_dir,
                       const std::string &slide_id, bool with_masks = true);

/// Squared Euclidean distance from every set pixel to the nearest unset
/// pixel (pixels outside the raster count as unset).
std::vector<double> squared_distance_to_boundary(const GrayImage &mask);

} // namespace milr
