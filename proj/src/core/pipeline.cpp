// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"

namespace milr {

using nlohmann::json;

const char *pipeline_mode_name(PipelineMode m) {
  return m == PipelineMode::TwoStep ? "two_step" : "single_step";
}

PipelineMode parse_pipeline_mode(const std::string &s) {
  if (s == "two_step")
    return PipelineMode::TwoStep;
  if (s == "single_step")
    return PipelineMode::SingleStep;
  fail(ErrorCode::InvalidArgument, "unknown mode '" + s + "'");
}

const char *aggregation_name(Aggregation a) {
  switch (a) {
  case Aggregation::Mean: return "mean";
  case Aggregation::Max: return "max";
  case Aggregation::TopKMean: return "top_k_mean";
  }
  return "?";
}

Aggregation parse_aggregation(const std::string &s) {
  if (s == "mean")
    return Aggregation::Mean;
  if (s == "max")
    return Aggregation::Max;
  if (s == "top_k_mean")
    return Aggregation::TopKMean;
  fail(ErrorCode::InvalidArgument, "unknown aggregation '" + s + "'");
}

void validate(const PipelineConfig &cfg) {
  MILR_REQUIRE(cfg.tile_size >= 1 && cfg.patch_size >= 1,
               ErrorCode::InvalidArgument, "tile and patch sizes must be positive");
  MILR_REQUIRE(cfg.tile_size % cfg.patch_size == 0, ErrorCode::InvalidArgument,
               "patch_size must divide tile_size");
  MILR_REQUIRE(cfg.responder_weight > 0.0 && cfg.tumor_weight > 0.0 &&
                   cfg.non_tumor_weight > 0.0,
               ErrorCode::InvalidArgument, "class weights must be positive");
  MILR_REQUIRE(cfg.min_tissue_frac >= 0.0 && cfg.min_tissue_frac <= 1.0,
               ErrorCode::InvalidArgument, "min_tissue_frac must lie in [0,1]");
  MILR_REQUIRE(cfg.validation_fraction >= 0.0 && cfg.validation_fraction < 1.0,
               ErrorCode::InvalidArgument, "validation_fraction must lie in [0,1)");
  MILR_REQUIRE(cfg.top_k >= 1, ErrorCode::InvalidArgument, "top_k must be >= 1");
  MILR_REQUIRE(cfg.features.patch_size == cfg.patch_size,
               ErrorCode::InvalidArgument,
               "feature patch size must equal the pipeline patch size");
}

// ---------------------------------------------------------------------------

void FeatureStore::put(const TileKey &key, Eigen::MatrixXd rows) {
  MILR_REQUIRE(rows.rows() == patch_grid_ * patch_grid_ && rows.cols() == d_,
               ErrorCode::DimensionMismatch,
               "tile " + key.slide_id + " feature block has the wrong shape");
  rows_[key] = std::move(rows);
}

const Eigen::MatrixXd &FeatureStore::original(const TileKey &key) const {
  const auto it = rows_.find(key);
  if (it == rows_.end())
    fail(ErrorCode::UnknownTile, "no features for tile " + key.slide_id + " (" +
                                     std::to_string(key.grid_x) + "," +
                                     std::to_string(key.grid_y) + ")");
  return it->second;
}

Eigen::MatrixXd FeatureStore::instances(const TileRecord &tile) const {
  const Eigen::MatrixXd &src = original(key_of(tile));
  if (tile.transform == Dihedral::Identity)
    return src;
  const int g = patch_grid_;
  Eigen::MatrixXd out(src.rows(), src.cols());
  for (int y = 0; y < g; ++y)
    for (int x = 0; x < g; ++x) {
      const auto [sx, sy] = dihedral_source(tile.transform, x, y, g);
      out.row(y * g + x) = src.row(sy * g + sx);
    }
  return out;
}

FeatureStore FeatureStore::from_matrix(const FeatureMatrix &m, int patch_grid) {
  MILR_REQUIRE(m.index.size() == m.n, ErrorCode::DimensionMismatch,
               "feature file needs a row index to map rows onto tiles");
  FeatureStore store(patch_grid, static_cast<int>(m.d));
  std::map<TileKey, Eigen::MatrixXd> blocks;
  std::map<TileKey, int> filled;
  const int k = patch_grid * patch_grid;
  for (std::uint32_t i = 0; i < m.n; ++i) {
    const auto &r = m.index[i];
    MILR_REQUIRE(r.patch_x >= 0 && r.patch_x < patch_grid && r.patch_y >= 0 &&
                     r.patch_y < patch_grid,
                 ErrorCode::MismatchedGrid,
                 "feature row " + std::to_string(i) + " lies outside the patch grid");
    TileKey key{r.slide_id, r.grid_x, r.grid_y};
    auto [it, inserted] = blocks.try_emplace(key, Eigen::MatrixXd::Zero(k, m.d));
    for (std::uint32_t j = 0; j < m.d; ++j)
      it->second(r.patch_y * patch_grid + r.patch_x, j) = m.row(i)[j];
    ++filled[key];
  }
  for (auto &[key, block] : blocks) {
    MILR_REQUIRE(filled[key] == k, ErrorCode::MismatchedGrid,
                 "tile " + key.slide_id + " (" + std::to_string(key.grid_x) + "," +
                     std::to_string(key.grid_y) + ") has " +
                     std::to_string(filled[key]) + " of " + std::to_string(k) +
                     " patch rows");
    store.put(key, std::move(block));
  }
  return store;
}

FeatureMatrix FeatureStore::to_matrix() const {
  FeatureMatrix m;
  m.d = static_cast<std::uint32_t>(d_);
  const int g = patch_grid_;
  for (const auto &[key, block] : rows_) {
    for (int r = 0; r < block.rows(); ++r) {
      for (int j = 0; j < d_; ++j)
        m.values.push_back(static_cast<float>(block(r, j)));
      m.index.push_back({key.slide_id, key.grid_x, key.grid_y, r % g, r / g});
    }
  }
  m.n = static_cast<std::uint32_t>(m.index.size());
  return m;
}

void extract_tile_features(const RgbImage &slide,
                           const std::vector<TileRecord> &tiles,
                           const PipelineConfig &cfg, FeatureStore &store) {
  const int g = cfg.patch_grid();
  const int p = cfg.patch_size;
  for (const auto &t : tiles) {
    if (t.augmented() || store.contains(key_of(t)))
      continue;
    const RgbImage raster = slide.crop(t.origin_x, t.origin_y, t.tile_size, t.tile_size);
    Eigen::MatrixXd rows(g * g, kHandcraftedDim);
    for (int py = 0; py < g; ++py)
      for (int px = 0; px < g; ++px) {
        const auto f = extract_handcrafted(raster.crop(px * p, py * p, p, p), cfg.features);
        for (int j = 0; j < kHandcraftedDim; ++j)
          rows(py * g + px, j) = f[j];
      }
    store.put(key_of(t), std::move(rows));
  }
}

// ---------------------------------------------------------------------------

namespace {

std::size_t round_half_up(double v) {
  return static_cast<std::size_t>(std::floor(v + 0.5));
}

} // namespace

CohortSplit stratified_split(const std::vector<std::pair<std::string, int>> &patients,
                             double validation_fraction, std::uint64_t seed,
                             bool stratified) {
  std::vector<std::string> pos, neg;
  for (const auto &[id, y] : patients)
    (y == 1 ? pos : neg).push_back(id);
  CohortSplit split;
  split.stratified = stratified;
  if (stratified) {
    MILR_REQUIRE(!pos.empty() && !neg.empty(), ErrorCode::SingleClassCohort,
                 "stratified split needs responders and non-responders");
    Rng rp(derive_seed(seed, 1)), rn(derive_seed(seed, 2));
    rp.shuffle(pos);
    rn.shuffle(neg);
    const std::size_t vp =
        std::max<std::size_t>(1, round_half_up(pos.size() * validation_fraction));
    const std::size_t vn = std::min(neg.size(), round_half_up(neg.size() * validation_fraction));
    split.validation.assign(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(vp));
    split.validation.insert(split.validation.end(), neg.begin(),
                            neg.begin() + static_cast<std::ptrdiff_t>(vn));
    split.train.assign(pos.begin() + static_cast<std::ptrdiff_t>(vp), pos.end());
    split.train.insert(split.train.end(), neg.begin() + static_cast<std::ptrdiff_t>(vn),
                       neg.end());
  } else {
    std::vector<std::string> all;
    for (const auto &p : patients)
      all.push_back(p.first);
    Rng r(derive_seed(seed, 3));
    r.shuffle(all);
    std::size_t nv = round_half_up(all.size() * validation_fraction);
    if (all.size() >= 2)
      nv = std::clamp<std::size_t>(nv, validation_fraction > 0.0 ? 1 : 0, all.size() - 1);
    split.validation.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(nv));
    split.train.assign(all.begin() + static_cast<std::ptrdiff_t>(nv), all.end());
  }
  return split;
}

std::vector<std::vector<TileRecord>>
augment_tiles(const std::vector<std::vector<TileRecord>> &per_patient) {
  std::size_t m = 0;
  for (const auto &tiles : per_patient) {
    MILR_REQUIRE(!tiles.empty(), ErrorCode::EmptyPatient,
                 "a patient has no tiles to augment");
    m = std::max(m, tiles.size());
  }
  std::vector<std::vector<TileRecord>> out = per_patient;
  for (auto &tiles : out) {
    const std::size_t n = tiles.size();
    for (std::size_t j = 0; n + j < m; ++j) {
      TileRecord t = per_patient[&tiles - out.data()][j % n];
      const std::size_t pass = j / n;
      t.transform = kDihedralOrder[1 + pass % 7];
      t.aug_id = static_cast<int>(j + 1);
      tiles.push_back(std::move(t));
    }
  }
  return out;
}

namespace {

std::string tile_origin(const TileRecord &t) {
  return t.slide_id + ":" + std::to_string(t.grid_x) + ":" + std::to_string(t.grid_y);
}

} // namespace

std::vector<Bag> make_tumor_bags(const std::vector<PatientData> &patients,
                                 const FeatureStore &store,
                                 const PipelineConfig &cfg) {
  std::vector<Bag> bags;
  for (const auto &p : patients)
    for (const auto &t : p.tiles) {
      if (!t.tumor_label)
        fail(ErrorCode::UnlabeledTile, "tile " + tile_origin(t) + " has no tumor label");
      Bag b;
      b.origin = tile_origin(t);
      b.bag_id = b.origin;
      b.instances = store.instances(t);
      b.label = *t.tumor_label == TumorLabel::Tumor ? 1 : 0;
      b.weight = b.label == 1 ? cfg.tumor_weight : cfg.non_tumor_weight;
      bags.push_back(std::move(b));
    }
  return bags;
}

std::vector<TileRecord> filter_tumor_tiles(std::vector<TileRecord> tiles,
                                           const MilModel &tumor_model,
                                           double threshold,
                                           const FeatureStore &store) {
  std::vector<TileRecord> kept;
  for (auto &t : tiles) {
    t.tumor_prob = tumor_model.probability(store.instances(t));
    if (*t.tumor_prob >= threshold)
      kept.push_back(t);
  }
  return kept;
}

std::vector<TileRecord> labeled_tumor_tiles(const PatientData &patient) {
  std::vector<TileRecord> out;
  for (const auto &t : patient.tiles)
    if (t.tumor_label && *t.tumor_label == TumorLabel::Tumor)
      out.push_back(t);
  return out;
}

std::vector<Bag> make_responder_bags(const std::vector<PatientData> &patients,
                                     const std::vector<std::vector<TileRecord>> &tiles_per_patient,
                                     bool augment, const FeatureStore &store,
                                     const PipelineConfig &cfg) {
  MILR_REQUIRE(patients.size() == tiles_per_patient.size(),
               ErrorCode::DimensionMismatch, "one tile list per patient required");
  for (std::size_t i = 0; i < patients.size(); ++i)
    if (tiles_per_patient[i].empty())
      fail(ErrorCode::NoTumorTiles, "patient " + patients[i].patient_id + " has no tumor tiles");
  const auto lists = augment ? augment_tiles(tiles_per_patient) : tiles_per_patient;
  std::vector<Bag> bags;
  for (std::size_t i = 0; i < patients.size(); ++i)
    for (const auto &t : lists[i]) {
      Bag b;
      b.origin = patients[i].patient_id;
      b.bag_id = tile_origin(t) + (t.augmented() ? "#" + std::to_string(t.aug_id) : "");
      b.instances = store.instances(t);
      b.label = patients[i].response;
      b.weight = b.label == 1 ? cfg.responder_weight : 1.0;
      bags.push_back(std::move(b));
    }
  return bags;
}

double aggregate_scores(const std::vector<double> &probs, Aggregation agg,
                        int top_k) {
  MILR_REQUIRE(!probs.empty(), ErrorCode::InvalidArgument, "nothing to aggregate");
  switch (agg) {
  case Aggregation::Mean:
    return std::accumulate(probs.begin(), probs.end(), 0.0) / probs.size();
  case Aggregation::Max:
    return *std::max_element(probs.begin(), probs.end());
  case Aggregation::TopKMean: {
    std::vector<double> s = probs;
    std::sort(s.begin(), s.end(), std::greater<>());
    const std::size_t k = std::min<std::size_t>(s.size(), static_cast<std::size_t>(top_k));
    return std::accumulate(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / k;
  }
  }
  return 0.0;
}

PatientPrediction two_step_predict(const PatientData &patient,
                                   const MilModel *tumor_model,
                                   const MilModel &responder_model,
                                   const FeatureStore &store,
                                   const PipelineConfig &cfg) {
  MILR_REQUIRE(!patient.tiles.empty(), ErrorCode::EmptyPatient,
               "patient " + patient.patient_id + " has no tiles");
  PatientPrediction pred;
  pred.patient_id = patient.patient_id;
  pred.label = patient.response;
  pred.n_tiles_total = static_cast<int>(patient.tiles.size());

  std::vector<TileRecord> scored;
  std::map<TileKey, double> tumor_probs;
  if (tumor_model) {
    std::vector<TileRecord> all = patient.tiles;
    for (auto &t : all) {
      t.tumor_prob = tumor_model->probability(store.instances(t));
      tumor_probs[key_of(t)] = *t.tumor_prob;
      if (*t.tumor_prob >= cfg.tumor_decision_threshold)
        scored.push_back(t);
    }
    pred.n_tumor_tiles_predicted = static_cast<int>(scored.size());
    if (scored.empty()) {
      pred.fallback = true;
      scored = all;
    }
  } else {
    scored = patient.tiles;
  }

  std::vector<double> probs;
  for (const auto &t : scored) {
    const ForwardResult fr = responder_model.predict(store.instances(t));
    TilePrediction tp;
    tp.slide_id = t.slide_id;
    tp.grid_x = t.grid_x;
    tp.grid_y = t.grid_y;
    tp.tumor_prob = t.tumor_prob;
    tp.responder_prob = fr.p;
    tp.attention_max = fr.attention.maxCoeff();
    double h = 0.0;
    for (Eigen::Index k = 0; k < fr.attention.size(); ++k)
      if (fr.attention[k] > 0.0)
        h -= fr.attention[k] * std::log(fr.attention[k]);
    tp.attention_entropy = h;
    probs.push_back(fr.p);
    pred.tiles.push_back(std::move(tp));
  }
  pred.score = aggregate_scores(probs, cfg.aggregation, cfg.top_k);
  return pred;
}

namespace {

std::vector<PatientData> select(const std::vector<PatientData> &patients,
                                const std::vector<std::string> &ids) {
  std::set<std::string> want(ids.begin(), ids.end());
  std::vector<PatientData> out;
  for (const auto &p : patients)
    if (want.count(p.patient_id))
      out.push_back(p);
  return out;
}

std::vector<std::pair<std::string, int>> roster(const std::vector<PatientData> &patients) {
  std::vector<std::pair<std::string, int>> r;
  for (const auto &p : patients)
    r.emplace_back(p.patient_id, p.response);
  return r;
}

} // namespace

MilModel train_tumor_step(const std::vector<PatientData> &patients,
                          const FeatureStore &store, const PipelineConfig &cfg,
                          TrainConfig train_cfg) {
  validate(cfg);
  const CohortSplit split = stratified_split(roster(patients), cfg.validation_fraction,
                                             derive_seed(cfg.seed, 11), false);
  train_cfg.class_weights = {{0, cfg.non_tumor_weight}, {1, cfg.tumor_weight}};
  train_cfg.dims.d = store.dim();
  const auto train_bags = make_tumor_bags(select(patients, split.train), store, cfg);
  const auto val_bags = make_tumor_bags(select(patients, split.validation), store, cfg);
  return train(train_bags, val_bags, train_cfg);
}

namespace {

std::vector<std::vector<TileRecord>> responder_tiles(const std::vector<PatientData> &patients,
                                                     PipelineMode mode) {
  std::vector<std::vector<TileRecord>> out;
  for (const auto &p : patients)
    out.push_back(mode == PipelineMode::TwoStep ? labeled_tumor_tiles(p) : p.tiles);
  return out;
}

} // namespace

MilModel train_responder_step(const std::vector<PatientData> &patients,
                              const FeatureStore &store,
                              const PipelineConfig &cfg, TrainConfig train_cfg) {
  validate(cfg);
  const CohortSplit split = stratified_split(roster(patients), cfg.validation_fraction,
                                             derive_seed(cfg.seed, 21), true);
  const auto train_p = select(patients, split.train);
  const auto val_p = select(patients, split.validation);
  train_cfg.class_weights = {{0, 1.0}, {1, cfg.responder_weight}};
  train_cfg.dims.d = store.dim();
  const auto train_bags = make_responder_bags(train_p, responder_tiles(train_p, cfg.mode),
                                              cfg.augment, store, cfg);
  const auto val_bags =
      make_responder_bags(val_p, responder_tiles(val_p, cfg.mode), false, store, cfg);
  return train(train_bags, val_bags, train_cfg);
}

std::vector<PatientPrediction>
single_step_train_predict(const std::vector<PatientData> &train_patients,
                          const std::vector<PatientData> &test,
                          const FeatureStore &store, const PipelineConfig &cfg,
                          const TrainConfig &train_cfg) {
  PipelineConfig single = cfg;
  single.mode = PipelineMode::SingleStep;
  const MilModel model = train_responder_step(train_patients, store, single, train_cfg);
  std::vector<PatientPrediction> out;
  for (const auto &p : test)
    out.push_back(two_step_predict(p, nullptr, model, store, single));
  return out;
}

std::string prediction_to_json_line(const PatientPrediction &p) {
  json tiles = json::array();
  for (const auto &t : p.tiles) {
    json jt = {{"slide", t.slide_id},
               {"grid_x", t.grid_x},
               {"grid_y", t.grid_y},
               {"tumor_prob", t.tumor_prob ? json(*t.tumor_prob) : json(nullptr)},
               {"responder_prob", t.responder_prob},
               {"attention", {{"max", t.attention_max}, {"entropy", t.attention_entropy}}}};
    tiles.push_back(std::move(jt));
  }
  json j = {{"patient_id", p.patient_id},
            {"label", p.label},
            {"score", p.score},
            {"n_tiles_total", p.n_tiles_total},
            {"n_tumor_tiles_predicted", p.n_tumor_tiles_predicted},
            {"fallback", p.fallback},
            {"tiles", tiles}};
  return j.dump();
}

PatientPrediction prediction_from_json_line(const std::string &line) {
  PatientPrediction p;
  try {
    const json j = json::parse(line);
    p.patient_id = j.at("patient_id").get<std::string>();
    p.label = j.value("label", 0);
    p.score = j.at("score").get<double>();
    p.n_tiles_total = j.at("n_tiles_total").get<int>();
    p.n_tumor_tiles_predicted = j.at("n_tumor_tiles_predicted").get<int>();
    p.fallback = j.value("fallback", false);
    for (const auto &t : j.at("tiles")) {
      TilePrediction tp;
      tp.slide_id = t.at("slide").get<std::string>();
      tp.grid_x = t.at("grid_x").get<int>();
      tp.grid_y = t.at("grid_y").get<int>();
      if (!t.at("tumor_prob").is_null())
        tp.tumor_prob = t.at("tumor_prob").get<double>();
      tp.responder_prob = t.at("responder_prob").get<double>();
      tp.attention_max = t.at("attention").at("max").get<double>();
      tp.attention_entropy = t.at("attention").at("entropy").get<double>();
      p.tiles.push_back(tp);
    }
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedJson, std::string("prediction line: ") + e.what());
  }
  return p;
}

} // namespace milr
