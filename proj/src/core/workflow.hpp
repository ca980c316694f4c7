// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "cv.hpp"
#include "pipeline.hpp"

namespace milr {

// Artifact names written by the workflow commands.
inline constexpr const char *kRunFile = "run.json";
inline constexpr const char *kTumorModelFile = "tumor_model.json";
inline constexpr const char *kResponderModelFile = "responder_model.json";
inline constexpr const char *kPredictionsFile = "predictions.jsonl";
inline constexpr const char *kReportFile = "report.json";
inline constexpr const char *kTpsFile = "tps.jsonl";
inline constexpr const char *kEnrichmentFile = "enrichment.json";
inline constexpr const char *kAblationFile = "ablation.json";

/// Cohort, tiles with resolved tumor labels, and instance features.
struct Workspace {
  std::filesystem::path cohort_dir;
  CohortManifest manifest;
  std::vector<TileRecord> tiles;
  FeatureStore store;
  std::vector<PatientData> patients;
  std::string label_source;
  std::size_t labeled_tiles = 0;
};

/// Loads existing tiles and features when present (explicit path, output
/// directory, then cohort directory) and computes them otherwise.
Workspace load_workspace(const RunConfig &cfg, bool with_features = true);

/// Patients of the configured evaluation split ("test", "train", "all").
std::vector<PatientData> select_split(const std::vector<PatientData> &patients,
                                      const std::string &split);

/// Writes run.json (the resolved config plus an informational "run" block)
/// into the output directory.
void write_run_json(const RunConfig &cfg, const std::string &command);

// Each command writes its artifacts into cfg.out_dir() and returns a JSON
// summary of what it did.
nlohmann::ordered_json cmd_synth_generate(const RunConfig &cfg);
nlohmann::ordered_json cmd_tile(const RunConfig &cfg);
nlohmann::ordered_json cmd_features_extract(const RunConfig &cfg);
nlohmann::ordered_json cmd_features_import(const RunConfig &cfg,
                                           const std::filesystem::path &source);
nlohmann::ordered_json cmd_train_tumor(const RunConfig &cfg);
nlohmann::ordered_json cmd_train_responder(const RunConfig &cfg);
nlohmann::ordered_json cmd_predict(const RunConfig &cfg);
nlohmann::ordered_json cmd_cv(const RunConfig &cfg);
nlohmann::ordered_json cmd_eval_tps(const RunConfig &cfg);
nlohmann::ordered_json cmd_eval_enrich(const RunConfig &cfg);
nlohmann::ordered_json cmd_heatmap(const RunConfig &cfg);
nlohmann::ordered_json cmd_ablation(const RunConfig &cfg);
nlohmann::ordered_json cmd_export_labels(const RunConfig &cfg);

/// Per-patient TPS on the generator tumor mask, or on the union of
/// tumor-labeled tiles when no sidecar exists. Cells pool across slides.
struct PatientTps {
  std::string patient_id;
  int label = 0;
  double tps = 0.0;
  long cells = 0;
  long positive = 0;
  std::optional<double> true_tps;
};
std::vector<PatientTps> estimate_patient_tps(const Workspace &ws,
                                             const std::vector<PatientData> &patients,
                                             const TpsConfig &cfg);

/// CV of the configured pipeline on `patients`; trains the shared tumor
/// model first in two-step mode unless one is given.
CvReport run_pipeline_cv(const Workspace &ws, const std::vector<PatientData> &patients,
                         const RunConfig &cfg, const MilModel *tumor_model = nullptr);

std::string enrichment_to_json(const EnrichmentReport &r);

} // namespace milr
