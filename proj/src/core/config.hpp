// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "metrics.hpp"
#include "mil.hpp"
#include "pipeline.hpp"
#include "synth.hpp"
#include "tps.hpp"

namespace milr {

struct PathsConfig {
  std::string cohort = "cohort";
  /// Output directory; the cohort directory when empty.
  std::string out;
  /// Tile label source: "" (labels.jsonl in the cohort when present, else
  /// generator sidecars), "truth", or a labels.jsonl path.
  std::string labels;
  std::string tiles;
  std::string features;
  std::string tumor_model;
  std::string responder_model;
  std::string predictions;
  std::string ui;
};

struct TilingConfig {
  int tile_size = 128;
  double min_tissue_frac = 0.05;
  std::optional<int> otsu_threshold;
};

struct EvalConfig {
  int folds = 10;
  int repeats = 10;
  /// Which patients `predict` and `eval` use: "test", "train" or "all".
  std::string split = "test";
  double tps_threshold = 0.5;
  /// Score source for `eval enrich`: "predictions" or "tps".
  std::string scores = "predictions";
  std::optional<double> threshold;
  ThresholdPolicy threshold_policy = ThresholdPolicy::FullRecall;
};

struct AnnotateConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
};

struct HeatmapConfig {
  /// Patient to render; every patient of the eval split when empty.
  std::string patient;
  int max_tiles = 8;
};

/// Everything a command needs; serialized verbatim as run.json.
struct RunConfig {
  int version = 1;
  std::uint64_t seed = 7;
  PathsConfig paths;
  SynthConfig synth;
  TilingConfig tiling;
  FeatureConfig features;
  TpsConfig tps;
  PipelineConfig pipeline;
  TrainConfig train_tumor;
  TrainConfig train_responder;
  EvalConfig eval;
  AnnotateConfig annotate;
  HeatmapConfig heatmap;

  /// Copies the shared seed and geometry into the per-module configs.
  void resolve();
  std::filesystem::path out_dir() const;
};

nlohmann::ordered_json config_to_json(const RunConfig &cfg);

/// Overlays `j` on the defaults. Unknown keys and mistyped values throw
/// InvalidArgument naming the JSON path.
RunConfig config_from_json(const nlohmann::json &j);
RunConfig load_config(const std::filesystem::path &path);

/// Sets one field addressed by a JSON pointer (e.g. "/tiling/tile_size")
/// from a JSON-encoded value; same checks as config_from_json.
void config_set(RunConfig &cfg, const std::string &pointer,
                const nlohmann::json &value);

} // namespace milr
