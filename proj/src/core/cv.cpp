// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "cv.hpp"

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace milr {

using nlohmann::ordered_json;

std::vector<int> stratified_folds(const std::vector<int> &labels, int n_folds,
                                  std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i)
    (labels[i] == 1 ? pos : neg).push_back(i);
  Rng rng(seed);
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<int> fold(labels.size(), 0);
  std::size_t slot = 0;
  for (const auto &group : {pos, neg})
    for (std::size_t i : group)
      fold[i] = static_cast<int>(slot++ % static_cast<std::size_t>(n_folds));
  return fold;
}

CvReport modified_repeated_cv(const std::vector<std::string> &ids,
                              const std::vector<int> &labels,
                              const FoldScorer &scorer, const CvOptions &opt,
                              const std::string &method) {
  MILR_REQUIRE(ids.size() == labels.size(), ErrorCode::DimensionMismatch,
               "one label per patient required");
  MILR_REQUIRE(opt.n_folds >= 2 && opt.n_repeats >= 1, ErrorCode::InvalidArgument,
               "need at least 2 folds and 1 repeat");
  MILR_REQUIRE(ids.size() >= static_cast<std::size_t>(opt.n_folds),
               ErrorCode::TooFewPatients,
               std::to_string(ids.size()) + " patients for " +
                   std::to_string(opt.n_folds) + " folds");
  std::size_t npos = 0;
  for (int y : labels)
    npos += y == 1;
  MILR_REQUIRE(npos > 0 && npos < labels.size(), ErrorCode::SingleClassCohort,
               "cross-validation needs responders and non-responders");

  CvReport report;
  report.method = method;
  report.options = opt;
  std::vector<double> rocs, prs;
  for (int rep = 0; rep < opt.n_repeats; ++rep) {
    const auto fold = stratified_folds(labels, opt.n_folds,
                                       derive_seed(opt.seed, 100 + static_cast<std::uint64_t>(rep)));
    RepeatResult rr;
    rr.repeat = rep;
    std::vector<double> pooled(ids.size(), 0.0);
    for (int f = 0; f < opt.n_folds; ++f) {
      std::vector<std::size_t> train, test;
      for (std::size_t i = 0; i < ids.size(); ++i)
        (fold[i] == f ? test : train).push_back(i);
      if (test.empty())
        continue;
      const auto s = scorer(train, test, rep, f, rr.fallbacks);
      MILR_REQUIRE(s.size() == test.size(), ErrorCode::DimensionMismatch,
                   "scorer returned the wrong number of scores");
      for (std::size_t k = 0; k < test.size(); ++k)
        pooled[test[k]] = s[k];
    }
    for (std::size_t i = 0; i < ids.size(); ++i)
      rr.scores.push_back({ids[i], labels[i], fold[i], pooled[i]});
    rr.roc_auc = roc_auc(pooled, labels);
    rr.pr_auc = pr_auc(pooled, labels);
    rocs.push_back(rr.roc_auc);
    prs.push_back(rr.pr_auc);
    report.repeats.push_back(std::move(rr));
  }
  report.roc_auc = t_interval(rocs);
  report.pr_auc = t_interval(prs);
  return report;
}

FoldScorer pipeline_scorer(const std::vector<PatientData> &patients,
                           const FeatureStore &store, const PipelineConfig &cfg,
                           const TrainConfig &responder_train,
                           const MilModel *tumor_model) {
  return [&patients, &store, cfg, responder_train, tumor_model](
             const std::vector<std::size_t> &train, const std::vector<std::size_t> &test,
             int repeat, int fold, int &fallbacks) {
    PipelineConfig c = cfg;
    c.seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(repeat) * 100 +
                                       static_cast<std::uint64_t>(fold));
    TrainConfig t = responder_train;
    t.seed = derive_seed(responder_train.seed,
                         1000 + static_cast<std::uint64_t>(repeat) * 100 +
                             static_cast<std::uint64_t>(fold));
    std::vector<PatientData> tr;
    for (std::size_t i : train)
      tr.push_back(patients[i]);
    const MilModel model = train_responder_step(tr, store, c, t);
    const MilModel *filter = c.mode == PipelineMode::TwoStep ? tumor_model : nullptr;
    std::vector<double> out;
    for (std::size_t i : test) {
      const auto p = two_step_predict(patients[i], filter, model, store, c);
      fallbacks += p.fallback ? 1 : 0;
      out.push_back(p.score);
    }
    return out;
  };
}

FoldScorer fixed_scorer(std::vector<double> scores) {
  return [scores = std::move(scores)](const std::vector<std::size_t> &,
                                      const std::vector<std::size_t> &test, int,
                                      int, int &) {
    std::vector<double> out;
    for (std::size_t i : test)
      out.push_back(scores.at(i));
    return out;
  };
}

namespace {

ordered_json summary(const MeanCi &m) {
  return {{"mean", m.mean}, {"sd", m.sd}, {"ci_low", m.ci.lo}, {"ci_high", m.ci.hi}};
}

} // namespace

std::string cv_report_to_json(const CvReport &r) {
  ordered_json reps = ordered_json::array();
  for (const auto &rr : r.repeats) {
    ordered_json scores = ordered_json::array();
    for (const auto &s : rr.scores)
      scores.push_back({{"patient_id", s.patient_id},
                        {"label", s.label},
                        {"fold", s.fold},
                        {"score", s.score}});
    reps.push_back({{"repeat", rr.repeat},
                    {"roc_auc", rr.roc_auc},
                    {"pr_auc", rr.pr_auc},
                    {"fallbacks", rr.fallbacks},
                    {"scores", scores}});
  }
  ordered_json j = {{"version", 1},
                    {"method", r.method},
                    {"n_folds", r.options.n_folds},
                    {"n_repeats", r.options.n_repeats},
                    {"seed", r.options.seed},
                    {"roc_auc", summary(r.roc_auc)},
                    {"pr_auc", summary(r.pr_auc)},
                    {"repeats", reps}};
  return j.dump(2) + "\n";
}

} // namespace milr
