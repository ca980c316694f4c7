// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "mil.hpp"
#include "slide_io.hpp"
#include "stain.hpp"

namespace milr {

enum class PipelineMode { TwoStep, SingleStep };
enum class Aggregation { Mean, Max, TopKMean };

const char *pipeline_mode_name(PipelineMode m);
PipelineMode parse_pipeline_mode(const std::string &s);
const char *aggregation_name(Aggregation a);
Aggregation parse_aggregation(const std::string &s);

struct PipelineConfig {
  int tile_size = 128;
  int patch_size = 32;
  double min_tissue_frac = 0.05;
  bool augment = true;
  PipelineMode mode = PipelineMode::TwoStep;
  double responder_weight = 4.0;
  double tumor_weight = 1.0;
  double non_tumor_weight = 1.0;
  double tumor_decision_threshold = 0.5;
  Aggregation aggregation = Aggregation::Mean;
  int top_k = 3;
  double validation_fraction = 0.2;
  std::uint64_t seed = 1;
  FeatureConfig features;

  int patch_grid() const { return tile_size / patch_size; }
};

void validate(const PipelineConfig &cfg);

/// One patient's tiles in deterministic (slide, row-major) order.
struct PatientData {
  std::string patient_id;
  int response = 0; // 1 = responder
  SplitTag split = SplitTag::Train;
  std::vector<TileRecord> tiles;
};

// ---------------------------------------------------------------------------
// Instance features per tile

struct TileKey {
  std::string slide_id;
  int grid_x = 0;
  int grid_y = 0;
  auto operator<=>(const TileKey &) const = default;
};

inline TileKey key_of(const TileRecord &t) {
  return {t.slide_id, t.grid_x, t.grid_y};
}

/// Sub-patch feature rows for every original tile, in row-major patch
/// order. Augmented tiles are served by permuting rows along the tile's
/// dihedral transform of the patch grid.
class FeatureStore {
public:
  FeatureStore() = default;
  FeatureStore(int patch_grid, int d) : patch_grid_(patch_grid), d_(d) {}

  int patch_grid() const noexcept { return patch_grid_; }
  int dim() const noexcept { return d_; }
  std::size_t size() const noexcept { return rows_.size(); }

  void put(const TileKey &key, Eigen::MatrixXd rows);
  bool contains(const TileKey &key) const { return rows_.count(key) != 0; }
  const Eigen::MatrixXd &original(const TileKey &key) const;

  /// K x d instances for a (possibly augmented) tile record.
  Eigen::MatrixXd instances(const TileRecord &tile) const;

  static FeatureStore from_matrix(const FeatureMatrix &m, int patch_grid);
  FeatureMatrix to_matrix() const;

private:
  int patch_grid_ = 0;
  int d_ = 0;
  std::map<TileKey, Eigen::MatrixXd> rows_;
};

/// Handcrafted features for each tile's sub-patches.
void extract_tile_features(const RgbImage &slide,
                           const std::vector<TileRecord> &tiles,
                           const PipelineConfig &cfg, FeatureStore &store);

// ---------------------------------------------------------------------------

struct CohortSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  bool stratified = true;
};

/// Per-class split at `validation_fraction` (rounding half up). When
/// stratified, the validation part always holds at least one responder.
CohortSplit stratified_split(const std::vector<std::pair<std::string, int>> &patients,
                             double validation_fraction, std::uint64_t seed,
                             bool stratified = true);

/// Extends every patient's list to the maximum count by cycling the
/// originals; pass p over the originals uses transform 1 + (p mod 7) of the
/// dihedral order (rot90, rot180, rot270, flip_h, flip_v, transpose,
/// anti_transpose).
std::vector<std::vector<TileRecord>>
augment_tiles(const std::vector<std::vector<TileRecord>> &per_patient);

std::vector<Bag> make_tumor_bags(const std::vector<PatientData> &patients,
                                 const FeatureStore &store,
                                 const PipelineConfig &cfg);

/// Records tumor_prob on every tile and returns those at or above the
/// threshold.
std::vector<TileRecord> filter_tumor_tiles(std::vector<TileRecord> tiles,
                                           const MilModel &tumor_model,
                                           double threshold,
                                           const FeatureStore &store);

/// One bag per tile in `tiles_per_patient` (already restricted to tumor
/// tiles for the two-step mode), labeled with the patient response and
/// weighted responder_weight : 1.
std::vector<Bag> make_responder_bags(const std::vector<PatientData> &patients,
                                     const std::vector<std::vector<TileRecord>> &tiles_per_patient,
                                     bool augment, const FeatureStore &store,
                                     const PipelineConfig &cfg);

/// Tiles carrying a ground-truth tumor label.
std::vector<TileRecord> labeled_tumor_tiles(const PatientData &patient);

struct TilePrediction {
  std::string slide_id;
  int grid_x = 0;
  int grid_y = 0;
  std::optional<double> tumor_prob;
  double responder_prob = 0.0;
  double attention_max = 0.0;
  double attention_entropy = 0.0;
};

struct PatientPrediction {
  std::string patient_id;
  int label = 0;
  double score = 0.0;
  int n_tiles_total = 0;
  int n_tumor_tiles_predicted = 0;
  bool fallback = false;
  std::vector<TilePrediction> tiles;
};

double aggregate_scores(const std::vector<double> &probs, Aggregation agg,
                        int top_k);

/// Tumor filter, then responder model per surviving tile. Falls back to all
/// tiles (and sets `fallback`) when nothing survives. A null tumor model
/// means single-step prediction over all tiles.
PatientPrediction two_step_predict(const PatientData &patient,
                                   const MilModel *tumor_model,
                                   const MilModel &responder_model,
                                   const FeatureStore &store,
                                   const PipelineConfig &cfg);

/// Tumor-recognition training: random patient-level split, tile bags
/// weighted tumor_weight : non_tumor_weight.
MilModel train_tumor_step(const std::vector<PatientData> &patients,
                          const FeatureStore &store, const PipelineConfig &cfg,
                          TrainConfig train_cfg);

/// Responder-identification training on the given patients: stratified
/// split, tumor tiles by label (two-step) or all tiles (single-step),
/// augmentation of the training portion.
MilModel train_responder_step(const std::vector<PatientData> &patients,
                              const FeatureStore &store,
                              const PipelineConfig &cfg, TrainConfig train_cfg);

/// Single-step ablation: train on `train` patients with all tiles, predict
/// `test` patients with all tiles.
std::vector<PatientPrediction>
single_step_train_predict(const std::vector<PatientData> &train,
                          const std::vector<PatientData> &test,
                          const FeatureStore &store, const PipelineConfig &cfg,
                          const TrainConfig &train_cfg);

std::string prediction_to_json_line(const PatientPrediction &p);
PatientPrediction prediction_from_json_line(const std::string &line);

} // namespace milr
