// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "workflow.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <set>

#include "annotation.hpp"
#include "cohort.hpp"
#include "error.hpp"
#include "heatmap.hpp"
#include "rng.hpp"
#include "synth.hpp"
#include "tps.hpp"

namespace milr {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char *kVersion = "0.1.0";

std::optional<fs::path> find_artifact(const RunConfig &cfg, const std::string &explicit_path,
                                      const char *name) {
  if (!explicit_path.empty()) {
    MILR_REQUIRE(fs::exists(explicit_path), ErrorCode::Io,
                 "artifact " + explicit_path + " does not exist");
    return fs::path(explicit_path);
  }
  for (const fs::path &dir : {cfg.out_dir(), fs::path(cfg.paths.cohort)})
    if (fs::exists(dir / name))
      return dir / name;
  return std::nullopt;
}

fs::path require_artifact(const RunConfig &cfg, const std::string &explicit_path,
                          const char *name, const char *producer) {
  const auto p = find_artifact(cfg, explicit_path, name);
  if (!p)
    fail(ErrorCode::Io, std::string("no ") + name + " found; run `" + producer + "` first");
  return *p;
}

void ensure_out(const RunConfig &cfg) {
  std::error_code ec;
  fs::create_directories(cfg.out_dir(), ec);
  MILR_REQUIRE(!ec, ErrorCode::Io, "cannot create " + cfg.out_dir().string());
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  MILR_REQUIRE(out.good(), ErrorCode::Io, "cannot write " + path.string());
  out << text;
  MILR_REQUIRE(out.good(), ErrorCode::Io, "write failed for " + path.string());
}

ordered_json interval_json(const MeanCi &m) {
  return {{"mean", m.mean}, {"ci_low", m.ci.lo}, {"ci_high", m.ci.hi}};
}

std::string short_number(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

std::vector<std::string> ids_of(const std::vector<PatientData> &ps) {
  std::vector<std::string> out;
  for (const auto &p : ps)
    out.push_back(p.patient_id);
  return out;
}

std::vector<int> labels_of(const std::vector<PatientData> &ps) {
  std::vector<int> out;
  for (const auto &p : ps)
    out.push_back(p.response);
  return out;
}

bool both_classes(const std::vector<int> &y) {
  const auto pos = std::count(y.begin(), y.end(), 1);
  return pos > 0 && pos < static_cast<long>(y.size());
}

ordered_json train_summary(const MilModel &m) {
  ordered_json j = {{"epochs_run", m.log.size()}};
  for (const auto &e : m.log)
    if (e.selected) {
      j["selected_epoch"] = e.epoch;
      j["train_loss"] = e.train_loss;
      j["val_loss"] = e.val_loss;
    }
  return j;
}

MilModel tumor_model_for(const Workspace &ws, const std::vector<PatientData> &patients,
                         const RunConfig &cfg) {
  return train_tumor_step(patients, ws.store, cfg.pipeline, cfg.train_tumor);
}

} // namespace

Workspace load_workspace(const RunConfig &cfg, bool with_features) {
  Workspace ws;
  ws.cohort_dir = cfg.paths.cohort;
  ws.manifest = read_cohort(ws.cohort_dir);

  if (const auto tiles = find_artifact(cfg, cfg.paths.tiles, kTilesFile)) {
    ws.tiles = read_tiles(*tiles);
    std::erase_if(ws.tiles, [](const TileRecord &t) { return t.augmented(); });
    for (const auto &t : ws.tiles)
      MILR_REQUIRE(t.tile_size == cfg.tiling.tile_size, ErrorCode::ConfigInconsistent,
                   tiles->string() + " was cut at tile size " + std::to_string(t.tile_size) +
                       ", config asks for " + std::to_string(cfg.tiling.tile_size));
  } else {
    ws.tiles = tile_cohort(ws.cohort_dir, ws.manifest, cfg.tiling.tile_size,
                           cfg.tiling.min_tissue_frac, cfg.tiling.otsu_threshold);
  }

  TileLabels labels;
  const fs::path default_snapshot = ws.cohort_dir / kLabelsFile;
  if (cfg.paths.labels == "truth" ||
      (cfg.paths.labels.empty() && !fs::exists(default_snapshot))) {
    labels = truth_labels(ws.cohort_dir, ws.manifest, cfg.tiling.tile_size);
    ws.label_source = "truth";
  } else {
    const fs::path p = cfg.paths.labels.empty() ? default_snapshot : fs::path(cfg.paths.labels);
    labels = read_label_snapshot(p);
    ws.label_source = p.string();
  }
  for (auto &t : ws.tiles)
    t.tumor_label.reset();
  ws.labeled_tiles = attach_labels(ws.tiles, labels);

  if (with_features) {
    if (const auto f = find_artifact(cfg, cfg.paths.features, kFeaturesFile)) {
      ws.store = FeatureStore::from_matrix(read_features(*f), cfg.pipeline.patch_grid());
    } else {
      ws.store = extract_cohort_features(ws.cohort_dir, ws.manifest, ws.tiles, cfg.pipeline);
    }
    for (const auto &t : ws.tiles)
      if (!ws.store.contains(key_of(t)))
        fail(ErrorCode::UnknownTile, "features lack tile " + t.slide_id + " (" +
                                         std::to_string(t.grid_x) + "," +
                                         std::to_string(t.grid_y) + ")");
  }
  ws.patients = build_patients(ws.manifest, ws.tiles);
  return ws;
}

std::vector<PatientData> select_split(const std::vector<PatientData> &patients,
                                      const std::string &split) {
  std::vector<PatientData> out;
  for (const auto &p : patients)
    if (split == "all" || (split == "train" && p.split == SplitTag::Train) ||
        (split == "test" && p.split == SplitTag::Test))
      out.push_back(p);
  return out;
}

void write_run_json(const RunConfig &cfg, const std::string &command) {
  ensure_out(cfg);
  ordered_json j = config_to_json(cfg);
  j["run"] = {{"command", command},
              {"milr_version", kVersion},
              {"seeds",
               {{"synth", cfg.synth.seed},
                {"pipeline", cfg.pipeline.seed},
                {"train_tumor", cfg.train_tumor.seed},
                {"train_responder", cfg.train_responder.seed}}}};
  write_text(cfg.out_dir() / kRunFile, j.dump(2) + "\n");
}

ordered_json cmd_synth_generate(const RunConfig &cfg) {
  ensure_out(cfg);
  const CohortManifest m = write_synth_cohort(cfg.synth, cfg.out_dir());
  int responders = 0, test = 0;
  for (const auto &p : m.patients) {
    responders += p.response == Response::Responder;
    test += p.split == SplitTag::Test;
  }
  return {{"cohort", cfg.out_dir().string()},
          {"patients", m.patients.size()},
          {"responders", responders},
          {"test_patients", test},
          {"pattern_link", pattern_link_name(cfg.synth.pattern_link)}};
}

ordered_json cmd_tile(const RunConfig &cfg) {
  ensure_out(cfg);
  const CohortManifest m = read_cohort(cfg.paths.cohort);
  const auto tiles = tile_cohort(cfg.paths.cohort, m, cfg.tiling.tile_size,
                                 cfg.tiling.min_tissue_frac, cfg.tiling.otsu_threshold);
  write_tiles(tiles, cfg.out_dir() / kTilesFile);
  std::set<std::string> slides;
  for (const auto &t : tiles)
    slides.insert(t.slide_id);
  return {{"tiles", tiles.size()},
          {"slides_with_tiles", slides.size()},
          {"file", (cfg.out_dir() / kTilesFile).string()}};
}

ordered_json cmd_features_extract(const RunConfig &cfg) {
  ensure_out(cfg);
  RunConfig c = cfg;
  c.paths.features.clear();
  const Workspace ws = [&] {
    Workspace w;
    w.cohort_dir = c.paths.cohort;
    w.manifest = read_cohort(w.cohort_dir);
    if (const auto t = find_artifact(c, c.paths.tiles, kTilesFile))
      w.tiles = read_tiles(*t);
    else
      w.tiles = tile_cohort(w.cohort_dir, w.manifest, c.tiling.tile_size,
                            c.tiling.min_tissue_frac, c.tiling.otsu_threshold);
    std::erase_if(w.tiles, [](const TileRecord &t) { return t.augmented(); });
    w.store = extract_cohort_features(w.cohort_dir, w.manifest, w.tiles, c.pipeline);
    return w;
  }();
  const FeatureMatrix m = ws.store.to_matrix();
  write_features(m, cfg.out_dir() / kFeaturesFile);
  return {{"tiles", ws.store.size()},
          {"rows", m.n},
          {"dim", m.d},
          {"file", (cfg.out_dir() / kFeaturesFile).string()}};
}

ordered_json cmd_features_import(const RunConfig &cfg, const fs::path &source) {
  ensure_out(cfg);
  const FeatureStore store =
      FeatureStore::from_matrix(read_features(source), cfg.pipeline.patch_grid());
  RunConfig c = cfg;
  c.paths.features.clear();
  std::vector<TileRecord> tiles;
  if (const auto t = find_artifact(c, c.paths.tiles, kTilesFile))
    tiles = read_tiles(*t);
  else
    tiles = tile_cohort(c.paths.cohort, read_cohort(c.paths.cohort), c.tiling.tile_size,
                        c.tiling.min_tissue_frac, c.tiling.otsu_threshold);
  for (const auto &t : tiles)
    if (!t.augmented() && !store.contains(key_of(t)))
      fail(ErrorCode::UnknownTile, "imported features lack tile " + t.slide_id + " (" +
                                       std::to_string(t.grid_x) + "," +
                                       std::to_string(t.grid_y) + ")");
  const FeatureMatrix m = store.to_matrix();
  write_features(m, cfg.out_dir() / kFeaturesFile);
  return {{"tiles", store.size()}, {"rows", m.n}, {"dim", m.d}};
}

ordered_json cmd_train_tumor(const RunConfig &cfg) {
  ensure_out(cfg);
  const Workspace ws = load_workspace(cfg);
  const auto train_p = select_split(ws.patients, "train");
  const MilModel model = tumor_model_for(ws, train_p, cfg);
  save_model(model, cfg.out_dir() / kTumorModelFile);
  ordered_json j = {{"model", (cfg.out_dir() / kTumorModelFile).string()},
                    {"label_source", ws.label_source},
                    {"training", train_summary(model)}};
  std::vector<double> s;
  std::vector<int> y;
  for (const auto &p : select_split(ws.patients, "test"))
    for (const auto &t : p.tiles)
      if (t.tumor_label) {
        s.push_back(model.probability(ws.store.instances(t)));
        y.push_back(*t.tumor_label == TumorLabel::Tumor ? 1 : 0);
      }
  if (both_classes(y))
    j["held_out"] = {{"tiles", s.size()}, {"roc_auc", roc_auc(s, y)}, {"pr_auc", pr_auc(s, y)}};
  return j;
}

ordered_json cmd_train_responder(const RunConfig &cfg) {
  ensure_out(cfg);
  const Workspace ws = load_workspace(cfg);
  const MilModel model = train_responder_step(select_split(ws.patients, "train"), ws.store,
                                              cfg.pipeline, cfg.train_responder);
  save_model(model, cfg.out_dir() / kResponderModelFile);
  return {{"model", (cfg.out_dir() / kResponderModelFile).string()},
          {"mode", pipeline_mode_name(cfg.pipeline.mode)},
          {"augment", cfg.pipeline.augment},
          {"training", train_summary(model)}};
}

ordered_json cmd_predict(const RunConfig &cfg) {
  ensure_out(cfg);
  const Workspace ws = load_workspace(cfg);
  const MilModel responder = load_model(
      require_artifact(cfg, cfg.paths.responder_model, kResponderModelFile, "train responder"));
  std::optional<MilModel> tumor;
  if (cfg.pipeline.mode == PipelineMode::TwoStep)
    tumor = load_model(require_artifact(cfg, cfg.paths.tumor_model, kTumorModelFile, "train tumor"));
  const auto patients = select_split(ws.patients, cfg.eval.split);
  std::string lines;
  std::vector<double> s;
  std::vector<int> y;
  int fallbacks = 0;
  for (const auto &p : patients) {
    const auto pred = two_step_predict(p, tumor ? &*tumor : nullptr, responder, ws.store, cfg.pipeline);
    lines += prediction_to_json_line(pred) + "\n";
    s.push_back(pred.score);
    y.push_back(pred.label);
    fallbacks += pred.fallback;
  }
  write_text(cfg.out_dir() / kPredictionsFile, lines);
  ordered_json j = {{"patients", patients.size()},
                    {"fallbacks", fallbacks},
                    {"file", (cfg.out_dir() / kPredictionsFile).string()}};
  if (both_classes(y))
    j["roc_auc"] = roc_auc(s, y);
  if (std::count(y.begin(), y.end(), 1) > 0)
    j["pr_auc"] = pr_auc(s, y);
  return j;
}

CvReport run_pipeline_cv(const Workspace &ws, const std::vector<PatientData> &patients,
                         const RunConfig &cfg, const MilModel *tumor_model) {
  std::optional<MilModel> trained;
  if (cfg.pipeline.mode == PipelineMode::TwoStep && !tumor_model) {
    trained = tumor_model_for(ws, patients, cfg);
    tumor_model = &*trained;
  }
  CvOptions opt{cfg.eval.folds, cfg.eval.repeats, derive_seed(cfg.seed, 4)};
  std::string method = pipeline_mode_name(cfg.pipeline.mode);
  method += cfg.pipeline.augment ? "+augment" : "";
  return modified_repeated_cv(ids_of(patients), labels_of(patients),
                              pipeline_scorer(patients, ws.store, cfg.pipeline,
                                              cfg.train_responder, tumor_model),
                              opt, method);
}

ordered_json cmd_cv(const RunConfig &cfg) {
  ensure_out(cfg);
  const Workspace ws = load_workspace(cfg);
  std::optional<MilModel> tumor;
  if (cfg.pipeline.mode == PipelineMode::TwoStep && !cfg.paths.tumor_model.empty())
    tumor = load_model(cfg.paths.tumor_model);
  const auto patients = select_split(ws.patients, "train");
  const CvReport r = run_pipeline_cv(ws, patients, cfg, tumor ? &*tumor : nullptr);
  write_text(cfg.out_dir() / kReportFile, cv_report_to_json(r));
  return {{"method", r.method},
          {"patients", patients.size()},
          {"folds", r.options.n_folds},
          {"repeats", r.options.n_repeats},
          {"roc_auc", interval_json(r.roc_auc)},
          {"pr_auc", interval_json(r.pr_auc)},
          {"file", (cfg.out_dir() / kReportFile).string()}};
}

std::vector<PatientTps> estimate_patient_tps(const Workspace &ws,
                                             const std::vector<PatientData> &patients,
                                             const TpsConfig &cfg) {
  std::map<std::string, const PatientEntry *> entries;
  for (const auto &p : ws.manifest.patients)
    entries[p.id] = &p;
  std::vector<PatientTps> out;
  for (const auto &pd : patients) {
    PatientTps r;
    r.patient_id = pd.patient_id;
    r.label = pd.response;
    long true_cells = 0, true_pos = 0;
    bool have_truth = true;
    for (const auto &rel : entries.at(pd.patient_id)->slides) {
      const SlideImage slide = load_slide(ws.cohort_dir, rel);
      const fs::path dir = (ws.cohort_dir / rel).parent_path();
      const std::string id = slide_id_from_path(rel);
      GrayImage mask;
      if (fs::exists(dir / (id + ".truth.json"))) {
        const GroundTruth gt = read_truth(dir, id, true);
        mask = gt.tumor_mask;
        true_cells += gt.tumor_cells();
        true_pos += gt.positive_tumor_cells();
      } else {
        have_truth = false;
        const int w = slide.pixels.width(), h = slide.pixels.height();
        mask = GrayImage{w, h, std::vector<std::uint8_t>(std::size_t(w) * h, 0)};
        for (const auto &t : pd.tiles)
          if (t.slide_id == id && t.tumor_label && *t.tumor_label == TumorLabel::Tumor)
            for (int y = t.origin_y; y < std::min(h, t.origin_y + t.tile_size); ++y)
              for (int x = t.origin_x; x < std::min(w, t.origin_x + t.tile_size); ++x)
                mask.data[std::size_t(y) * w + x] = 255;
      }
      try {
        const TpsResult t = tps_estimate(slide.pixels, mask, cfg);
        r.cells += t.cells;
        r.positive += t.positive;
      } catch (const Error &e) {
        if (e.code() != ErrorCode::NoTumorRegion && e.code() != ErrorCode::NoCellsFound)
          throw;
      }
    }
    MILR_REQUIRE(r.cells > 0, ErrorCode::NoCellsFound,
                 "patient " + pd.patient_id + ": no tumor nuclei found");
    r.tps = static_cast<double>(r.positive) / static_cast<double>(r.cells);
    if (have_truth && true_cells > 0)
      r.true_tps = static_cast<double>(true_pos) / static_cast<double>(true_cells);
    out.push_back(r);
  }
  return out;
}

std::string enrichment_to_json(const EnrichmentReport &r) {
  auto ci = [](const Interval &i) { return ordered_json{{"low", i.lo}, {"high", i.hi}}; };
  ordered_json j = {{"version", 1},
                    {"rule", r.rule},
                    {"threshold", r.threshold},
                    {"n_total", r.n_total},
                    {"n_selected", r.n_selected},
                    {"responders_total", r.responders_total},
                    {"responders_selected", r.responders_selected},
                    {"false_positives", r.false_positives},
                    {"false_negatives", r.false_negatives},
                    {"true_negatives", r.true_negatives},
                    {"precision", r.precision},
                    {"precision_ci", ci(r.precision_ci)},
                    {"accuracy", r.accuracy},
                    {"accuracy_ci", ci(r.accuracy_ci)},
                    {"recall", r.recall},
                    {"recall_ci", ci(r.recall_ci)},
                    {"selected", r.selected_ids}};
  return j.dump(2) + "\n";
}

ordered_json cmd_eval_tps(const RunConfig &cfg) {
  ensure_out(cfg);
  const Workspace ws = load_workspace(cfg, false);
  const auto patients = select_split(ws.patients, cfg.eval.split);
  const auto tps = estimate_patient_tps(ws, patients, cfg.tps);
  std::string lines;
  std::vector<double> s;
  std::vector<int> y;
  std::vector<std::string> ids;
  double abs_err = 0.0;
  int with_truth = 0;
  for (const auto &t : tps) {
    ordered_json j = {{"patient_id", t.patient_id},
                      {"label", t.label},
                      {"tps", t.tps},
                      {"cells", t.cells},
                      {"positive", t.positive},
                      {"true_tps", t.true_tps ? ordered_json(*t.true_tps) : ordered_json(nullptr)}};
    lines += j.dump() + "\n";
    s.push_back(t.tps);
    y.push_back(t.label);
    ids.push_back(t.patient_id);
    if (t.true_tps) {
      abs_err += std::abs(t.tps - *t.true_tps);
      ++with_truth;
    }
  }
  write_text(cfg.out_dir() / kTpsFile, lines);
  ordered_json j = {{"patients", tps.size()}, {"file", (cfg.out_dir() / kTpsFile).string()}};
  if (with_truth > 0)
    j["mean_abs_error_vs_truth"] = abs_err / with_truth;
  if (both_classes(y))
    j["roc_auc"] = roc_auc(s, y);
  const std::string rule = "TPS >= " + short_number(cfg.eval.tps_threshold);
  try {
    const auto rep = enrich(s, y, cfg.eval.tps_threshold, rule, ids);
    write_text(cfg.out_dir() / kEnrichmentFile, enrichment_to_json(rep));
    j["enrichment"] = {{"rule", rule},
                       {"n_selected", rep.n_selected},
                       {"responders_selected", rep.responders_selected},
                       {"precision", rep.precision},
                       {"accuracy", rep.accuracy}};
  } catch (const Error &e) {
    if (e.code() != ErrorCode::EmptySelection)
      throw;
    j["enrichment"] = {{"rule", rule}, {"error", "EmptySelection"}};
  }
  return j;
}

ordered_json cmd_eval_enrich(const RunConfig &cfg) {
  ensure_out(cfg);
  std::vector<double> s;
  std::vector<int> y;
  std::vector<std::string> ids;
  std::string source;
  if (cfg.eval.scores == "tps") {
    const fs::path p = require_artifact(cfg, "", kTpsFile, "eval tps");
    source = p.string();
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) {
        const json j = json::parse(line);
        ids.push_back(j.at("patient_id"));
        y.push_back(j.at("label"));
        s.push_back(j.at("tps"));
      }
  } else {
    const fs::path p = require_artifact(cfg, cfg.paths.predictions, kPredictionsFile, "predict");
    source = p.string();
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line))
      if (!line.empty()) {
        const auto pred = prediction_from_json_line(line);
        ids.push_back(pred.patient_id);
        y.push_back(pred.label);
        s.push_back(pred.score);
      }
  }
  MILR_REQUIRE(!s.empty(), ErrorCode::InvalidArgument, source + " holds no scores");
  double threshold = 0.0;
  std::string threshold_source;
  if (cfg.eval.threshold) {
    threshold = *cfg.eval.threshold;
    threshold_source = "config";
  } else {
    threshold = select_threshold(s, y, cfg.eval.threshold_policy);
    threshold_source = std::string("selected:") + threshold_policy_name(cfg.eval.threshold_policy);
  }
  const std::string rule = (cfg.eval.scores == "tps" ? "TPS >= " : "MIL score >= ") +
                           short_number(threshold);
  const auto rep = enrich(s, y, threshold, rule, ids);
  write_text(cfg.out_dir() / kEnrichmentFile, enrichment_to_json(rep));
  return {{"rule", rule},
          {"threshold_source", threshold_source},
          {"scores", source},
          {"n_total", rep.n_total},
          {"n_selected", rep.n_selected},
          {"responders_selected", rep.responders_selected},
          {"precision", rep.precision},
          {"accuracy", rep.accuracy},
          {"recall", rep.recall},
          {"file", (cfg.out_dir() / kEnrichmentFile).string()}};
}

ordered_json cmd_heatmap(const RunConfig &cfg) {
  ensure_out(cfg);
  const Workspace ws = load_workspace(cfg);
  const MilModel responder = load_model(
      require_artifact(cfg, cfg.paths.responder_model, kResponderModelFile, "train responder"));
  std::optional<MilModel> tumor;
  if (cfg.pipeline.mode == PipelineMode::TwoStep)
    tumor = load_model(require_artifact(cfg, cfg.paths.tumor_model, kTumorModelFile, "train tumor"));
  std::vector<PatientData> patients;
  if (!cfg.heatmap.patient.empty()) {
    for (const auto &p : ws.patients)
      if (p.patient_id == cfg.heatmap.patient)
        patients.push_back(p);
    MILR_REQUIRE(!patients.empty(), ErrorCode::InvalidArgument,
                 "unknown patient '" + cfg.heatmap.patient + "'");
  } else {
    patients = select_split(ws.patients, cfg.eval.split);
  }
  std::map<std::string, std::string> slide_paths;
  for (const auto &p : ws.manifest.patients)
    for (const auto &rel : p.slides)
      slide_paths[slide_id_from_path(rel)] = rel;

  const fs::path root = cfg.out_dir() / "heatmaps";
  ordered_json written = ordered_json::array();
  for (const auto &p : patients) {
    const auto pred = two_step_predict(p, tumor ? &*tumor : nullptr, responder, ws.store, cfg.pipeline);
    std::vector<TilePrediction> tiles = pred.tiles;
    std::stable_sort(tiles.begin(), tiles.end(), [](const auto &a, const auto &b) {
      return a.responder_prob > b.responder_prob;
    });
    if (tiles.size() > static_cast<std::size_t>(cfg.heatmap.max_tiles))
      tiles.resize(static_cast<std::size_t>(cfg.heatmap.max_tiles));
    fs::create_directories(root / p.patient_id);
    std::string cached_id;
    std::optional<SlideImage> slide;
    for (const auto &tp : tiles) {
      const TileRecord *rec = nullptr;
      for (const auto &t : p.tiles)
        if (t.slide_id == tp.slide_id && t.grid_x == tp.grid_x && t.grid_y == tp.grid_y)
          rec = &t;
      if (cached_id != tp.slide_id) {
        slide = load_slide(ws.cohort_dir, slide_paths.at(tp.slide_id));
        cached_id = tp.slide_id;
      }
      const ForwardResult fr = responder.predict(ws.store.instances(*rec));
      const RgbImage img = render_attention_heatmap(
          extract_tile(slide->pixels, *rec), fr.attention,
          instance_logits(fr.cache, responder.params), cfg.pipeline.patch_size);
      const fs::path out = root / p.patient_id /
                           (tp.slide_id + "_" + std::to_string(tp.grid_x) + "_" +
                            std::to_string(tp.grid_y) + ".png");
      write_png_rgb(out, img);
      written.push_back({{"patient_id", p.patient_id},
                         {"file", out.string()},
                         {"responder_prob", tp.responder_prob}});
    }
  }
  return {{"heatmaps", written.size()}, {"files", written}};
}

ordered_json cmd_ablation(const RunConfig &cfg) {
  ensure_out(cfg);
  const Workspace ws = load_workspace(cfg);
  const auto patients = select_split(ws.patients, "train");
  const MilModel tumor = tumor_model_for(ws, patients, cfg);

  struct Cell {
    const char *name;
    PipelineMode mode;
    bool augment;
  };
  const Cell cells[] = {{"single_step", PipelineMode::SingleStep, true},
                        {"two_step", PipelineMode::TwoStep, false},
                        {"two_step_augmented", PipelineMode::TwoStep, true}};
  ordered_json rows = ordered_json::array();
  fs::create_directories(cfg.out_dir() / "ablation");
  for (const auto &c : cells) {
    RunConfig rc = cfg;
    rc.pipeline.mode = c.mode;
    rc.pipeline.augment = c.augment;
    const CvReport r = run_pipeline_cv(ws, patients, rc, &tumor);
    write_text(cfg.out_dir() / "ablation" / (std::string(c.name) + ".json"), cv_report_to_json(r));
    rows.push_back({{"method", c.name},
                    {"roc_auc", interval_json(r.roc_auc)},
                    {"pr_auc", interval_json(r.pr_auc)}});
  }
  std::vector<double> tps_scores;
  for (const auto &t : estimate_patient_tps(ws, patients, cfg.tps))
    tps_scores.push_back(t.tps);
  const CvReport tr = modified_repeated_cv(
      ids_of(patients), labels_of(patients), fixed_scorer(tps_scores),
      CvOptions{cfg.eval.folds, cfg.eval.repeats, derive_seed(cfg.seed, 4)}, "tps");
  write_text(cfg.out_dir() / "ablation" / "tps.json", cv_report_to_json(tr));
  rows.push_back({{"method", "tps"},
                  {"roc_auc", interval_json(tr.roc_auc)},
                  {"pr_auc", interval_json(tr.pr_auc)}});
  ordered_json table = {{"version", 1},
                        {"folds", cfg.eval.folds},
                        {"repeats", cfg.eval.repeats},
                        {"rows", rows}};
  write_text(cfg.out_dir() / kAblationFile, table.dump(2) + "\n");
  return table;
}

ordered_json cmd_export_labels(const RunConfig &cfg) {
  ensure_out(cfg);
  const fs::path log = fs::path(cfg.paths.cohort) / kLabelLogFile;
  const fs::path out = cfg.out_dir() / kLabelsFile;
  const std::size_t n = export_labels(log, out);
  return {{"labels", n}, {"file", out.string()}};
}

} // namespace milr
