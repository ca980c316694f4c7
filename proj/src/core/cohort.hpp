// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pipeline.hpp"
#include "slide_io.hpp"

namespace milr {

// Cohort-level artifacts shared by the workflow commands.
inline constexpr const char *kTilesFile = "tiles.jsonl";
inline constexpr const char *kFeaturesFile = "features.milf";
inline constexpr const char *kLabelsFile = "labels.jsonl";

/// Segments and tiles every slide of the cohort, in manifest order.
std::vector<TileRecord> tile_cohort(const std::filesystem::path &cohort_dir,
                                    const CohortManifest &manifest,
                                    int tile_size, double min_tissue_frac,
                                    std::optional<int> threshold_override = {});

std::string tile_to_json_line(const TileRecord &t);
TileRecord tile_from_json_line(const std::string &line);
void write_tiles(const std::vector<TileRecord> &tiles,
                 const std::filesystem::path &path);
std::vector<TileRecord> read_tiles(const std::filesystem::path &path);

using TileLabels = std::map<TileKey, TumorLabel>;

/// Tumor labels from generator sidecars, recomputed for the tiles' grid.
/// Slides without sidecars contribute nothing.
TileLabels truth_labels(const std::filesystem::path &cohort_dir,
                        const CohortManifest &manifest, int tile_size);

/// Tile labels from a `labels.jsonl` snapshot.
TileLabels read_label_snapshot(const std::filesystem::path &path);

/// Sets tumor_label on every tile found in `labels`; returns the count.
std::size_t attach_labels(std::vector<TileRecord> &tiles, const TileLabels &labels);

/// Groups tiles by patient in manifest order.
std::vector<PatientData> build_patients(const CohortManifest &manifest,
                                        const std::vector<TileRecord> &tiles);

/// Handcrafted sub-patch features for every original tile.
FeatureStore extract_cohort_features(const std::filesystem::path &cohort_dir,
                                     const CohortManifest &manifest,
                                     const std::vector<TileRecord> &tiles,
                                     const PipelineConfig &cfg);

/// Ground-truth tumor mask of a slide from its generator sidecar.
GrayImage truth_tumor_mask(const std::filesystem::path &cohort_dir,
                           const std::string &slide_path);

} // namespace milr
