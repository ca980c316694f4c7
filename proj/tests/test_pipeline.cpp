// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include <doctest.h>

#include <algorithm>
#include <set>

#include "pipeline.hpp"
#include "rng.hpp"
#include "synth.hpp"
#include "test_util.hpp"

using namespace milr;
using milr::test::code_of;

namespace {

std::vector<std::pair<std::string, int>> roster(int n, int responders) {
  std::vector<std::pair<std::string, int>> r;
  for (int i = 0; i < n; ++i)
    r.emplace_back("P" + std::to_string(i), i < responders ? 1 : 0);
  return r;
}

TileRecord tile(const std::string &slide, int gx, int gy, int size = 64) {
  TileRecord t;
  t.slide_id = slide;
  t.grid_x = gx;
  t.grid_y = gy;
  t.origin_x = gx * size;
  t.origin_y = gy * size;
  t.tile_size = size;
  t.tissue_fraction = 1.0;
  return t;
}

// Patients with n_tiles[i] tiles each and random features in the store.
struct Fixture {
  PipelineConfig cfg;
  FeatureStore store;
  std::vector<PatientData> patients;

  Fixture(const std::vector<int> &n_tiles, const std::vector<int> &response,
          std::uint64_t seed = 1) {
    cfg.tile_size = 64;
    cfg.patch_size = 16;
    cfg.features.patch_size = 16;
    store = FeatureStore(cfg.patch_grid(), kHandcraftedDim);
    Rng rng(seed);
    for (std::size_t i = 0; i < n_tiles.size(); ++i) {
      PatientData p;
      p.patient_id = "P" + std::to_string(i);
      p.response = response[i];
      for (int k = 0; k < n_tiles[i]; ++k) {
        TileRecord t = tile("S" + std::to_string(i), k % 5, k / 5);
        t.tumor_label = k % 3 == 2 ? TumorLabel::NonTumor : TumorLabel::Tumor;
        Eigen::MatrixXd rows(16, kHandcraftedDim);
        for (Eigen::Index r = 0; r < rows.size(); ++r)
          rows.data()[r] = rng.normal(response[i] ? 0.5 : 0.0, 1.0);
        store.put(key_of(t), rows);
        p.tiles.push_back(t);
      }
      patients.push_back(std::move(p));
    }
  }
};

TrainConfig tiny_train(int epochs = 3) {
  TrainConfig c;
  c.dims = {kHandcraftedDim, 8, 8, 4, false};
  c.epochs = epochs;
  return c;
}

} // namespace

TEST_CASE("stratified split of 46 patients with 10 responders") {
  const auto r = roster(46, 10);
  const CohortSplit s = stratified_split(r, 0.2, 5);
  REQUIRE(s.validation.size() == 9);
  int vr = 0;
  for (const auto &id : s.validation)
    vr += std::stoi(id.substr(1)) < 10;
  CHECK(vr == 2);
  CHECK(s.train.size() == 37);

  std::set<std::string> all(s.train.begin(), s.train.end());
  for (const auto &id : s.validation)
    CHECK(all.insert(id).second);
  CHECK(all.size() == 46);

  const CohortSplit again = stratified_split(r, 0.2, 5);
  CHECK(again.train == s.train);
  CHECK(again.validation == s.validation);
}

TEST_CASE("a lone responder always lands in validation") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const CohortSplit s = stratified_split(roster(5, 1), 0.2, seed);
    CHECK(std::find(s.validation.begin(), s.validation.end(), "P0") != s.validation.end());
    CHECK(s.validation.size() == 2); // 1 responder + round(4 * 0.2) = 1
  }
}

TEST_CASE("stratified split needs both classes") {
  CHECK(code_of([] { stratified_split(roster(5, 0), 0.2, 1); }) ==
        ErrorCode::SingleClassCohort);
  CHECK(code_of([] { stratified_split(roster(5, 5), 0.2, 1); }) ==
        ErrorCode::SingleClassCohort);
  const CohortSplit s = stratified_split(roster(10, 0), 0.2, 1, false);
  CHECK(s.validation.size() == 2);
  CHECK(s.train.size() == 8);
}

TEST_CASE("augmentation cycles originals through the dihedral order") {
  std::vector<std::vector<TileRecord>> in(2);
  for (int i = 0; i < 3; ++i)
    in[0].push_back(tile("A", i, 0));
  for (int i = 0; i < 7; ++i)
    in[1].push_back(tile("B", i, 0));
  const auto out = augment_tiles(in);
  REQUIRE(out[0].size() == 7);
  REQUIRE(out[1].size() == 7);
  for (int i = 0; i < 3; ++i) {
    CHECK(out[0][i].aug_id == 0);
    CHECK(out[0][i].transform == Dihedral::Identity);
  }
  const int src[] = {0, 1, 2, 0};
  const Dihedral tf[] = {Dihedral::Rot90, Dihedral::Rot90, Dihedral::Rot90, Dihedral::Rot180};
  for (int j = 0; j < 4; ++j) {
    const TileRecord &t = out[0][3 + j];
    CHECK(t.grid_x == src[j]);
    CHECK(t.transform == tf[j]);
    CHECK(t.aug_id == j + 1);
  }
  for (int i = 0; i < 7; ++i)
    CHECK_FALSE(out[1][i].augmented());
}

TEST_CASE("augmentation edge cases") {
  std::vector<std::vector<TileRecord>> same = {{tile("A", 0, 0), tile("A", 1, 0)},
                                               {tile("B", 0, 0), tile("B", 1, 0)}};
  const auto out = augment_tiles(same);
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t i = 0; i < 2; ++i)
      CHECK(key_of(out[p][i]) == key_of(same[p][i]));
  CHECK(augment_tiles({{tile("A", 0, 0)}})[0].size() == 1);
  CHECK(code_of([] { augment_tiles({{tile("A", 0, 0)}, {}}); }) == ErrorCode::EmptyPatient);

  // One original and 20 slots runs past the seven non-identity transforms.
  std::vector<std::vector<TileRecord>> long_cycle = {{tile("A", 0, 0)},
                                                     std::vector<TileRecord>(21, tile("B", 0, 0))};
  const auto lc = augment_tiles(long_cycle);
  REQUIRE(lc[0].size() == 21);
  for (int j = 0; j < 20; ++j)
    CHECK(lc[0][1 + j].transform == kDihedralOrder[1 + j % 7]);
}

TEST_CASE("augmented tiles are dihedral transforms of their sources") {
  Rng rng(31);
  PipelineConfig cfg;
  cfg.tile_size = 64;
  cfg.patch_size = 16;
  cfg.features.patch_size = 16;
  RgbImage slide(192, 128);
  for (auto &b : slide.bytes())
    b = static_cast<std::uint8_t>(rng.below(256));
  std::vector<std::vector<TileRecord>> in = {{tile("A", 0, 0), tile("A", 2, 1)},
                                             {}};
  for (int i = 0; i < 6; ++i)
    in[1].push_back(tile("B", i % 3, i / 3));
  FeatureStore store(cfg.patch_grid(), kHandcraftedDim);
  extract_tile_features(slide, in[0], cfg, store);
  const auto out = augment_tiles(in);
  for (const auto &t : out[0]) {
    if (!t.augmented())
      continue;
    TileRecord src = t;
    src.transform = Dihedral::Identity;
    src.aug_id = 0;
    const RgbImage raster = extract_tile(slide, t);
    CHECK(raster == apply_dihedral(extract_tile(slide, src), t.transform));

    // Stored rows, permuted for the transform, match features extracted
    // from the transformed raster.
    const Eigen::MatrixXd rows = store.instances(t);
    for (int py = 0; py < 4; ++py)
      for (int px = 0; px < 4; ++px) {
        const auto f = extract_handcrafted(raster.crop(px * 16, py * 16, 16, 16), cfg.features);
        for (int j = 0; j < kHandcraftedDim; ++j)
          CHECK(std::abs(rows(py * 4 + px, j) - f[j]) < 1e-6);
      }
  }
}

TEST_CASE("feature store lookups") {
  Fixture fx({2}, {1});
  TileRecord missing = tile("S9", 0, 0);
  CHECK(code_of([&] { fx.store.original(key_of(missing)); }) == ErrorCode::UnknownTile);
  const FeatureMatrix m = fx.store.to_matrix();
  CHECK(m.n == 32);
  CHECK(m.d == kHandcraftedDim);
  const FeatureStore back = FeatureStore::from_matrix(m, 4);
  CHECK(back.size() == 2);
  CHECK(code_of([&] { FeatureStore::from_matrix(m, 3); }) == ErrorCode::MismatchedGrid);
}

TEST_CASE("tumor bags: one per tile, equal weights") {
  PipelineConfig cfg;
  cfg.tile_size = 256;
  cfg.patch_size = 64;
  CHECK(cfg.patch_grid() * cfg.patch_grid() == 16);

  Fixture fx({6, 9}, {1, 0});
  const auto bags = make_tumor_bags(fx.patients, fx.store, fx.cfg);
  REQUIRE(bags.size() == 15);
  int tumor = 0;
  for (const auto &b : bags) {
    CHECK(b.size() == 16);
    CHECK(b.weight == 1.0);
    tumor += b.label;
  }
  CHECK(tumor == 10); // tumor tiles outnumber the rest 2:1
  CHECK(bags[0].bag_id == "S0:0:0");

  fx.patients[1].tiles[4].tumor_label.reset();
  try {
    make_tumor_bags(fx.patients, fx.store, fx.cfg);
    FAIL("expected UnlabeledTile");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::UnlabeledTile);
    CHECK(std::string(e.what()).find("S1:4:0") != std::string::npos);
  }
}

TEST_CASE("responder bags: weights, counts and augmentation") {
  Fixture fx({4, 7, 2}, {1, 0, 0});
  std::vector<std::vector<TileRecord>> tumor;
  std::size_t total = 0;
  for (const auto &p : fx.patients) {
    tumor.push_back(labeled_tumor_tiles(p));
    total += tumor.back().size();
  }
  const auto plain = make_responder_bags(fx.patients, tumor, false, fx.store, fx.cfg);
  CHECK(plain.size() == total);
  for (const auto &b : plain)
    CHECK(b.weight == (b.label ? 4.0 : 1.0));

  const auto aug = make_responder_bags(fx.patients, tumor, true, fx.store, fx.cfg);
  std::size_t m = 0;
  for (const auto &t : tumor)
    m = std::max(m, t.size());
  CHECK(aug.size() == m * fx.patients.size());
  for (const auto &p : fx.patients)
    CHECK(std::count_if(aug.begin(), aug.end(),
                        [&](const Bag &b) { return b.origin == p.patient_id; }) ==
          static_cast<long>(m));
  for (const auto &b : aug)
    CHECK(b.weight == (b.label ? 4.0 : 1.0));

  tumor[2].clear();
  CHECK(code_of([&] { make_responder_bags(fx.patients, tumor, false, fx.store, fx.cfg); }) ==
        ErrorCode::NoTumorTiles);
}

TEST_CASE("tumor filter thresholds") {
  Fixture fx({5}, {1});
  MilModel model;
  Rng rng(2);
  model.params = init_params({kHandcraftedDim, 8, 8, 4, false}, 9);
  const auto all = filter_tumor_tiles(fx.patients[0].tiles, model, 0.0, fx.store);
  CHECK(all.size() == 5);
  for (const auto &t : all)
    CHECK(t.tumor_prob.has_value());
  CHECK(filter_tumor_tiles(fx.patients[0].tiles, model, 1.0, fx.store).empty());
}

TEST_CASE("aggregation rules") {
  CHECK(aggregate_scores({0.2, 0.8}, Aggregation::Mean, 3) == 0.5);
  CHECK(aggregate_scores({0.7}, Aggregation::Mean, 3) == 0.7);
  CHECK(aggregate_scores({0.2, 0.8, 0.5}, Aggregation::Max, 3) == 0.8);
  CHECK(aggregate_scores({0.1, 0.9, 0.5, 0.7}, Aggregation::TopKMean, 2) ==
        doctest::Approx(0.8));
  CHECK(code_of([] { aggregate_scores({}, Aggregation::Mean, 1); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("two-step prediction and fallback") {
  Fixture fx({6, 6, 5, 5, 4, 4}, {1, 0, 1, 0, 0, 0});
  const MilModel responder = train_responder_step(fx.patients, fx.store, fx.cfg, tiny_train());

  MilModel tumor;
  tumor.params = MilParams::zeros({kHandcraftedDim, 8, 8, 4, false});
  tumor.params.c = 5.0; // every tile looks like tumor
  const PatientPrediction kept = two_step_predict(fx.patients[0], &tumor, responder, fx.store, fx.cfg);
  CHECK_FALSE(kept.fallback);
  CHECK(kept.n_tumor_tiles_predicted == 6);

  tumor.params.c = -5.0; // nothing survives
  const PatientPrediction fb = two_step_predict(fx.patients[0], &tumor, responder, fx.store, fx.cfg);
  CHECK(fb.fallback);
  CHECK(fb.n_tumor_tiles_predicted == 0);
  CHECK(fb.tiles.size() == 6);
  for (const auto *p : {&kept, &fb}) {
    double sum = 0.0;
    for (const auto &t : p->tiles)
      sum += t.responder_prob;
    CHECK(std::abs(p->score - sum / p->tiles.size()) < 1e-12);
    CHECK(p->score >= 0.0);
    CHECK(p->score <= 1.0);
    CHECK(p->n_tumor_tiles_predicted <= p->n_tiles_total);
  }

  PatientData one = fx.patients[1];
  one.tiles.resize(1);
  tumor.params.c = 5.0;
  const PatientPrediction single = two_step_predict(one, &tumor, responder, fx.store, fx.cfg);
  CHECK(single.score == single.tiles[0].responder_prob);

  const std::string line = prediction_to_json_line(kept);
  const PatientPrediction back = prediction_from_json_line(line);
  CHECK(back.patient_id == kept.patient_id);
  CHECK(back.score == kept.score);
  CHECK(back.tiles.size() == kept.tiles.size());
  CHECK(back.tiles[0].tumor_prob == kept.tiles[0].tumor_prob);
  CHECK(prediction_to_json_line(back) == line);
}

TEST_CASE("single-step runs without tumor labels") {
  Fixture fx({5, 4, 6, 3, 5, 4}, {1, 0, 1, 0, 0, 0});
  for (auto &p : fx.patients)
    for (auto &t : p.tiles)
      t.tumor_label.reset();
  PipelineConfig cfg = fx.cfg;
  cfg.mode = PipelineMode::SingleStep;
  const std::vector<PatientData> train(fx.patients.begin(), fx.patients.begin() + 4);
  const std::vector<PatientData> test(fx.patients.begin() + 4, fx.patients.end());
  const auto preds = single_step_train_predict(train, test, fx.store, cfg, tiny_train());
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].patient_id == "P4");
  CHECK(preds[1].patient_id == "P5");
  CHECK_FALSE(preds[0].fallback);
  CHECK(preds[0].tiles.size() == 5);

  // Two-step over the same patients reports the same ids.
  Fixture labeled({5, 4, 6, 3, 5, 4}, {1, 0, 1, 0, 0, 0});
  const MilModel tumor = train_tumor_step(labeled.patients, labeled.store, labeled.cfg, tiny_train());
  const MilModel resp = train_responder_step(
      std::vector<PatientData>(labeled.patients.begin(), labeled.patients.begin() + 4),
      labeled.store, labeled.cfg, tiny_train());
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(two_step_predict(labeled.patients[4 + i], &tumor, resp, labeled.store, labeled.cfg)
              .patient_id == preds[i].patient_id);
}

TEST_CASE("pipeline training is deterministic") {
  Fixture fx({5, 4, 6, 3, 5, 4}, {1, 0, 1, 0, 0, 0});
  const MilModel a = train_responder_step(fx.patients, fx.store, fx.cfg, tiny_train());
  const MilModel b = train_responder_step(fx.patients, fx.store, fx.cfg, tiny_train());
  CHECK(a.params.W1 == b.params.W1);
  CHECK(a.params.c == b.params.c);
}

TEST_CASE("pipeline config validation") {
  PipelineConfig cfg;
  cfg.patch_size = 48;
  CHECK(code_of([&] { validate(cfg); }) == ErrorCode::InvalidArgument);
  cfg = PipelineConfig{};
  cfg.responder_weight = 0.0;
  CHECK(code_of([&] { validate(cfg); }) == ErrorCode::InvalidArgument);
  CHECK(parse_pipeline_mode("single_step") == PipelineMode::SingleStep);
  CHECK(std::string(aggregation_name(Aggregation::TopKMean)) == "top_k_mean");
}
