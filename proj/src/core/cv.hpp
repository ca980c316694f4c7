// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "metrics.hpp"
#include "pipeline.hpp"

namespace milr {

struct CvOptions {
  int n_folds = 10;
  int n_repeats = 10;
  std::uint64_t seed = 1;
};

/// Fold index per patient. Responders and non-responders are shuffled
/// separately and dealt round-robin, responders first, so each class is
/// spread as evenly as possible over the folds.
std::vector<int> stratified_folds(const std::vector<int> &labels, int n_folds,
                                  std::uint64_t seed);

struct PooledScore {
  std::string patient_id;
  int label = 0;
  int fold = 0;
  double score = 0.0;
};

struct RepeatResult {
  int repeat = 0;
  double roc_auc = 0.0;
  double pr_auc = 0.0;
  int fallbacks = 0;
  std::vector<PooledScore> scores; // cohort order
};

struct CvReport {
  std::string method;
  CvOptions options;
  std::vector<RepeatResult> repeats;
  MeanCi roc_auc;
  MeanCi pr_auc;
};

/// Scores the `test` patients after training on `train` (indices into the
/// cohort). Returns one score per test index, in order. `fallbacks` may be
/// incremented for predictions that used the all-tiles fallback.
using FoldScorer = std::function<std::vector<double>(
    const std::vector<std::size_t> &train, const std::vector<std::size_t> &test,
    int repeat, int fold, int &fallbacks)>;

/// Modified repeated k-fold CV: out-of-fold scores of a repeat are pooled
/// and the metrics are evaluated once on the pooled list.
CvReport modified_repeated_cv(const std::vector<std::string> &ids,
                              const std::vector<int> &labels,
                              const FoldScorer &scorer, const CvOptions &opt,
                              const std::string &method);

/// Two-step (or single-step, per cfg.mode) pipeline scorer. The tumor model
/// is shared across folds; it is ignored in single-step mode.
FoldScorer pipeline_scorer(const std::vector<PatientData> &patients,
                           const FeatureStore &store, const PipelineConfig &cfg,
                           const TrainConfig &responder_train,
                           const MilModel *tumor_model);

/// Scores that need no training (e.g. TPS) evaluated through the same
/// pooling machinery.
FoldScorer fixed_scorer(std::vector<double> scores);

std::string cv_report_to_json(const CvReport &r);

} // namespace milr
