// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <span>
#include <string>
#include <vector>

namespace milr {

struct RocCurve {
  std::vector<double> thresholds; // descending; first is +inf
  std::vector<double> fpr;
  std::vector<double> tpr;
  double auc = 0.0;
};

struct PrCurve {
  std::vector<double> thresholds; // descending
  std::vector<double> recall;
  std::vector<double> precision;
  double auc = 0.0;
};

/// Threshold sweep over distinct scores, trapezoidal area. Equals the
/// Mann-Whitney statistic P(s+ > s-) + P(tie)/2.
RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels);
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Average precision: sum over cuts of delta-recall * precision, with tied
/// scores forming a single cut.
PrCurve pr_curve(std::span<const double> scores, std::span<const int> labels);
double pr_auc(std::span<const double> scores, std::span<const int> labels);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Wilson score interval for k successes in n trials at 95%.
Interval wilson_interval(long k, long n, double z = 1.959963984540054);

struct MeanCi {
  double mean = 0.0;
  double sd = 0.0;
  /// mean +/- t_{0.975, n-1} sd / sqrt(n); collapses to the mean for n = 1.
  Interval ci;
};

MeanCi t_interval(std::span<const double> values);

struct EnrichmentReport {
  std::string rule;
  double threshold = 0.0;
  long n_total = 0;
  long n_selected = 0;
  long responders_total = 0;
  long responders_selected = 0; // TP
  long false_positives = 0;
  long false_negatives = 0;
  long true_negatives = 0;
  double precision = 0.0;
  double accuracy = 0.0;
  double recall = 0.0;
  Interval precision_ci;
  Interval accuracy_ci;
  Interval recall_ci;
  std::vector<std::string> selected_ids;
};

/// Selects patients with score >= threshold. Throws EmptySelection when the
/// rule selects nobody.
EnrichmentReport enrich(std::span<const double> scores,
                        std::span<const int> labels, double threshold,
                        const std::string &rule,
                        std::span<const std::string> ids = {});

enum class ThresholdPolicy { FullRecall, MaxF1 };

ThresholdPolicy parse_threshold_policy(const std::string &s);
const char *threshold_policy_name(ThresholdPolicy p);

/// FullRecall: the largest observed score that still selects every
/// responder. MaxF1: the observed score maximizing F1, larger on ties.
double select_threshold(std::span<const double> scores,
                        std::span<const int> labels, ThresholdPolicy policy);

} // namespace milr
