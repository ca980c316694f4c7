// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <set>
#include <vector>

namespace milr::test {

/// Mann-Whitney pairwise count: P(s+ > s-) + P(tie) / 2.
inline double roc_pairwise(const std::vector<double> &s, const std::vector<int> &y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

/// Average precision by counting directly at every distinct score cut.
inline double ap_bruteforce(const std::vector<double> &s, const std::vector<int> &y) {
  double positives = 0.0;
  for (int v : y)
    positives += v;
  const std::set<double, std::greater<>> cuts(s.begin(), s.end());
  double ap = 0.0, prev_recall = 0.0;
  for (double t : cuts) {
    double tp = 0.0, sel = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= t) {
        sel += 1.0;
        tp += y[i];
      }
    const double recall = tp / positives;
    ap += (recall - prev_recall) * (tp / sel);
    prev_recall = recall;
  }
  return ap;
}

} // namespace milr::test
