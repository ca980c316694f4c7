// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "error.hpp"

namespace milr {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  MILR_REQUIRE(scores.size() == labels.size(), ErrorCode::DimensionMismatch,
               "scores and labels differ in length");
  for (int y : labels)
    MILR_REQUIRE(y == 0 || y == 1, ErrorCode::InvalidArgument,
                 "labels must be 0 or 1");
  for (double s : scores)
    MILR_REQUIRE(!std::isnan(s), ErrorCode::NonFiniteValue, "NaN score");
}

// Indices sorted by descending score; groups of equal scores are cut
// boundaries.
std::vector<std::size_t> descending(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return idx;
}

} // namespace

RocCurve roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const long pos = std::count(labels.begin(), labels.end(), 1);
  const long neg = static_cast<long>(labels.size()) - pos;
  MILR_REQUIRE(pos > 0 && neg > 0, ErrorCode::SingleClassLabels,
               "ROC AUC needs both classes");
  const auto idx = descending(scores);
  RocCurve c;
  c.thresholds.push_back(std::numeric_limits<double>::infinity());
  c.fpr.push_back(0.0);
  c.tpr.push_back(0.0);
  long tp = 0, fp = 0;
  // Twice the area in units of 1/(pos*neg); integer until the final divide.
  long double area2 = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    const long tp0 = tp, fp0 = fp;
    while (i < idx.size() && scores[idx[i]] == s) {
      (labels[idx[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    area2 += static_cast<long double>(fp - fp0) * (tp + tp0);
    c.thresholds.push_back(s);
    c.fpr.push_back(static_cast<double>(fp) / neg);
    c.tpr.push_back(static_cast<double>(tp) / pos);
  }
  c.auc = static_cast<double>(area2 / (2.0L * pos * neg));
  return c;
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  return roc_curve(scores, labels).auc;
}

PrCurve pr_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const long pos = std::count(labels.begin(), labels.end(), 1);
  MILR_REQUIRE(pos > 0, ErrorCode::NoPositives, "PR AUC needs a positive label");
  const auto idx = descending(scores);
  PrCurve c;
  long tp = 0, seen = 0;
  double ap = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    const long tp0 = tp;
    while (i < idx.size() && scores[idx[i]] == s) {
      tp += labels[idx[i]] == 1;
      ++seen;
      ++i;
    }
    const double precision = static_cast<double>(tp) / seen;
    const double recall = static_cast<double>(tp) / pos;
    ap += (static_cast<double>(tp - tp0) / pos) * precision;
    c.thresholds.push_back(s);
    c.recall.push_back(recall);
    c.precision.push_back(precision);
  }
  c.auc = ap;
  return c;
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  return pr_curve(scores, labels).auc;
}

Interval wilson_interval(long k, long n, double z) {
  MILR_REQUIRE(n > 0 && k >= 0 && k <= n, ErrorCode::InvalidArgument,
               "Wilson interval needs 0 <= k <= n, n > 0");
  const double p = static_cast<double>(k) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double centre = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

MeanCi t_interval(std::span<const double> values) {
  MILR_REQUIRE(!values.empty(), ErrorCode::InvalidArgument,
               "t interval needs at least one value");
  MeanCi r;
  const double n = static_cast<double>(values.size());
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (values.size() < 2) {
    r.ci = {r.mean, r.mean};
    return r;
  }
  double ss = 0.0;
  for (double v : values)
    ss += (v - r.mean) * (v - r.mean);
  r.sd = std::sqrt(ss / (n - 1.0));
  boost::math::students_t dist(n - 1.0);
  const double t = boost::math::quantile(dist, 0.975);
  const double half = t * r.sd / std::sqrt(n);
  r.ci = {r.mean - half, r.mean + half};
  return r;
}

EnrichmentReport enrich(std::span<const double> scores,
                        std::span<const int> labels, double threshold,
                        const std::string &rule,
                        std::span<const std::string> ids) {
  check_inputs(scores, labels);
  MILR_REQUIRE(!scores.empty(), ErrorCode::InvalidArgument,
               "enrichment needs at least one patient");
  MILR_REQUIRE(ids.empty() || ids.size() == scores.size(),
               ErrorCode::DimensionMismatch, "ids and scores differ in length");
  EnrichmentReport r;
  r.rule = rule;
  r.threshold = threshold;
  r.n_total = static_cast<long>(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool sel = scores[i] >= threshold;
    const bool resp = labels[i] == 1;
    r.responders_total += resp;
    if (sel) {
      ++r.n_selected;
      (resp ? r.responders_selected : r.false_positives) += 1;
      if (!ids.empty())
        r.selected_ids.push_back(ids[i]);
    } else {
      (resp ? r.false_negatives : r.true_negatives) += 1;
    }
  }
  MILR_REQUIRE(r.n_selected > 0, ErrorCode::EmptySelection,
               "rule '" + rule + "' selects no patients; precision undefined");
  r.precision = static_cast<double>(r.responders_selected) / r.n_selected;
  r.accuracy = static_cast<double>(r.responders_selected + r.true_negatives) / r.n_total;
  r.precision_ci = wilson_interval(r.responders_selected, r.n_selected);
  r.accuracy_ci = wilson_interval(r.responders_selected + r.true_negatives, r.n_total);
  if (r.responders_total > 0) {
    r.recall = static_cast<double>(r.responders_selected) / r.responders_total;
    r.recall_ci = wilson_interval(r.responders_selected, r.responders_total);
  }
  return r;
}

ThresholdPolicy parse_threshold_policy(const std::string &s) {
  if (s == "full_recall")
    return ThresholdPolicy::FullRecall;
  if (s == "max_f1")
    return ThresholdPolicy::MaxF1;
  fail(ErrorCode::InvalidArgument, "unknown threshold policy '" + s + "'");
}

const char *threshold_policy_name(ThresholdPolicy p) {
  return p == ThresholdPolicy::FullRecall ? "full_recall" : "max_f1";
}

double select_threshold(std::span<const double> scores,
                        std::span<const int> labels, ThresholdPolicy policy) {
  check_inputs(scores, labels);
  const long pos = std::count(labels.begin(), labels.end(), 1);
  const long neg = static_cast<long>(labels.size()) - pos;
  MILR_REQUIRE(pos > 0 && neg > 0, ErrorCode::SingleClassLabels,
               "threshold selection needs both classes");
  if (policy == ThresholdPolicy::FullRecall) {
    double tau = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < scores.size(); ++i)
      if (labels[i] == 1)
        tau = std::min(tau, scores[i]);
    return tau;
  }
  const auto idx = descending(scores);
  double best_f1 = -1.0, best_tau = scores[idx.front()];
  long tp = 0, seen = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double s = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == s) {
      tp += labels[idx[i]] == 1;
      ++seen;
      ++i;
    }
    const double f1 = 2.0 * tp / static_cast<double>(seen + pos);
    if (f1 > best_f1) { // strict: the earlier (larger) threshold wins ties
      best_f1 = f1;
      best_tau = s;
    }
  }
  return best_tau;
}

} // namespace milr
