// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "config.hpp"

#include <fstream>
#include <sstream>

#include "error.hpp"
#include "rng.hpp"

namespace milr {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

void RunConfig::resolve() {
  synth.seed = seed;
  features.patch_size = features.patch_size > 0 ? features.patch_size : 32;
  pipeline.tile_size = tiling.tile_size;
  pipeline.min_tissue_frac = tiling.min_tissue_frac;
  pipeline.patch_size = features.patch_size;
  pipeline.features = features;
  pipeline.seed = derive_seed(seed, 1);
  train_tumor.seed = derive_seed(seed, 2);
  train_responder.seed = derive_seed(seed, 3);
  train_tumor.dims.d = kHandcraftedDim;
  train_responder.dims.d = kHandcraftedDim;
}

fs::path RunConfig::out_dir() const {
  return paths.out.empty() ? fs::path(paths.cohort) : fs::path(paths.out);
}

namespace {

template <class T> ordered_json opt(const std::optional<T> &v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

ordered_json train_json(const TrainConfig &t) {
  return {{"lr_min", t.lr_min},   {"lr_max", t.lr_max},
          {"beta1", t.beta1},     {"beta2", t.beta2},
          {"eps", t.eps},         {"epochs", t.epochs},
          {"cycle_steps", t.cycle_steps}, {"patience", t.patience},
          {"hidden1", t.dims.h1}, {"hidden2", t.dims.h2},
          {"attention", t.dims.attention}, {"gated", t.dims.gated}};
}

void train_from(const json &j, TrainConfig &t) {
  t.lr_min = j.at("lr_min");
  t.lr_max = j.at("lr_max");
  t.beta1 = j.at("beta1");
  t.beta2 = j.at("beta2");
  t.eps = j.at("eps");
  t.epochs = j.at("epochs");
  t.cycle_steps = j.at("cycle_steps");
  t.patience = j.at("patience");
  t.dims.h1 = j.at("hidden1");
  t.dims.h2 = j.at("hidden2");
  t.dims.attention = j.at("attention");
  t.dims.gated = j.at("gated");
}

bool compatible(const json &base, const json &v) {
  // Optional fields accept any scalar; null on a required field fails in decode.
  if (base.is_null() || v.is_null())
    return true;
  if (base.is_boolean())
    return v.is_boolean();
  if (base.is_number_float())
    return v.is_number();
  if (base.is_number_unsigned())
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (base.is_number_integer())
    return v.is_number_integer();
  if (base.is_string())
    return v.is_string();
  if (base.is_object())
    return v.is_object();
  return base.type() == v.type();
}

void merge_strict(json &base, const json &overlay, const std::string &where) {
  MILR_REQUIRE(overlay.is_object(), ErrorCode::InvalidArgument,
               "config " + (where.empty() ? std::string("root") : where) + " must be an object");
  for (const auto &[key, value] : overlay.items()) {
    const std::string path = where + "/" + key;
    MILR_REQUIRE(base.contains(key), ErrorCode::InvalidArgument,
                 "unknown config key '" + path + "'");
    json &slot = base[key];
    MILR_REQUIRE(compatible(slot, value), ErrorCode::InvalidArgument,
                 "config key '" + path + "' has the wrong type");
    if (slot.is_object())
      merge_strict(slot, value, path);
    else
      slot = value;
  }
}

RunConfig decode(const json &j) {
  RunConfig c;
  try {
    c.version = j.at("version");
    MILR_REQUIRE(c.version == 1, ErrorCode::VersionMismatch,
                 "config version " + std::to_string(c.version) + " is not supported");
    c.seed = j.at("seed").get<std::uint64_t>();

    const json &p = j.at("paths");
    c.paths.cohort = p.at("cohort");
    c.paths.out = p.at("out");
    c.paths.labels = p.at("labels");
    c.paths.tiles = p.at("tiles");
    c.paths.features = p.at("features");
    c.paths.tumor_model = p.at("tumor_model");
    c.paths.responder_model = p.at("responder_model");
    c.paths.predictions = p.at("predictions");
    c.paths.ui = p.at("ui");

    const json &s = j.at("synth");
    c.synth.n_patients = s.at("n_patients");
    c.synth.responder_fraction = s.at("responder_fraction");
    c.synth.n_test = s.at("n_test");
    c.synth.slide_size = s.at("slide_size");
    c.synth.tile_size = s.at("tile_size");
    c.synth.tps_mean = s.at("tps_mean");
    c.synth.tps_sd = s.at("tps_sd");
    c.synth.pattern_link = parse_pattern_link(s.at("pattern_link"));
    c.synth.tiles_per_patient_range = {s.at("tiles_per_patient_min").get<int>(),
                                       s.at("tiles_per_patient_max").get<int>()};
    c.synth.tumor_tile_threshold = s.at("tumor_tile_threshold");

    const json &t = j.at("tiling");
    c.tiling.tile_size = t.at("tile_size");
    c.tiling.min_tissue_frac = t.at("min_tissue_frac");
    if (!t.at("otsu_threshold").is_null())
      c.tiling.otsu_threshold = t.at("otsu_threshold").get<int>();

    const json &f = j.at("features");
    c.features.patch_size = f.at("patch_size");
    c.features.dab_positive_od = f.at("dab_positive_od");
    c.features.tissue_luminance_max = f.at("tissue_luminance_max");

    const json &tp = j.at("tps");
    c.tps.nucleus_h_od = tp.at("nucleus_h_od");
    c.tps.dab_positive_od = tp.at("dab_positive_od");
    c.tps.min_nucleus_area = tp.at("min_nucleus_area");

    const json &pl = j.at("pipeline");
    c.pipeline.mode = parse_pipeline_mode(pl.at("mode"));
    c.pipeline.augment = pl.at("augment");
    c.pipeline.responder_weight = pl.at("responder_weight");
    c.pipeline.tumor_weight = pl.at("tumor_weight");
    c.pipeline.non_tumor_weight = pl.at("non_tumor_weight");
    c.pipeline.tumor_decision_threshold = pl.at("tumor_decision_threshold");
    c.pipeline.aggregation = parse_aggregation(pl.at("aggregation"));
    c.pipeline.top_k = pl.at("top_k");
    c.pipeline.validation_fraction = pl.at("validation_fraction");

    train_from(j.at("train_tumor"), c.train_tumor);
    train_from(j.at("train_responder"), c.train_responder);

    const json &e = j.at("eval");
    c.eval.folds = e.at("folds");
    c.eval.repeats = e.at("repeats");
    c.eval.split = e.at("split");
    MILR_REQUIRE(c.eval.split == "test" || c.eval.split == "train" || c.eval.split == "all",
                 ErrorCode::InvalidArgument, "eval.split must be test, train or all");
    c.eval.tps_threshold = e.at("tps_threshold");
    c.eval.scores = e.at("scores");
    MILR_REQUIRE(c.eval.scores == "predictions" || c.eval.scores == "tps",
                 ErrorCode::InvalidArgument, "eval.scores must be predictions or tps");
    if (!e.at("threshold").is_null())
      c.eval.threshold = e.at("threshold").get<double>();
    c.eval.threshold_policy = parse_threshold_policy(e.at("threshold_policy"));

    const json &a = j.at("annotate");
    c.annotate.host = a.at("host");
    c.annotate.port = a.at("port");

    const json &h = j.at("heatmap");
    c.heatmap.patient = h.at("patient");
    c.heatmap.max_tiles = h.at("max_tiles");
  } catch (const json::exception &ex) {
    fail(ErrorCode::InvalidArgument, std::string("config: ") + ex.what());
  }
  c.resolve();
  return c;
}

} // namespace

ordered_json config_to_json(const RunConfig &c) {
  ordered_json j;
  j["version"] = c.version;
  j["seed"] = c.seed;
  j["paths"] = {{"cohort", c.paths.cohort},
                {"out", c.paths.out},
                {"labels", c.paths.labels},
                {"tiles", c.paths.tiles},
                {"features", c.paths.features},
                {"tumor_model", c.paths.tumor_model},
                {"responder_model", c.paths.responder_model},
                {"predictions", c.paths.predictions},
                {"ui", c.paths.ui}};
  j["synth"] = {{"n_patients", c.synth.n_patients},
                {"responder_fraction", c.synth.responder_fraction},
                {"n_test", c.synth.n_test},
                {"slide_size", c.synth.slide_size},
                {"tile_size", c.synth.tile_size},
                {"tps_mean", c.synth.tps_mean},
                {"tps_sd", c.synth.tps_sd},
                {"pattern_link", pattern_link_name(c.synth.pattern_link)},
                {"tiles_per_patient_min", c.synth.tiles_per_patient_range[0]},
                {"tiles_per_patient_max", c.synth.tiles_per_patient_range[1]},
                {"tumor_tile_threshold", c.synth.tumor_tile_threshold}};
  j["tiling"] = {{"tile_size", c.tiling.tile_size},
                 {"min_tissue_frac", c.tiling.min_tissue_frac},
                 {"otsu_threshold", opt(c.tiling.otsu_threshold)}};
  j["features"] = {{"patch_size", c.features.patch_size},
                   {"dab_positive_od", c.features.dab_positive_od},
                   {"tissue_luminance_max", c.features.tissue_luminance_max}};
  j["tps"] = {{"nucleus_h_od", c.tps.nucleus_h_od},
              {"dab_positive_od", c.tps.dab_positive_od},
              {"min_nucleus_area", c.tps.min_nucleus_area}};
  j["pipeline"] = {{"mode", pipeline_mode_name(c.pipeline.mode)},
                   {"augment", c.pipeline.augment},
                   {"responder_weight", c.pipeline.responder_weight},
                   {"tumor_weight", c.pipeline.tumor_weight},
                   {"non_tumor_weight", c.pipeline.non_tumor_weight},
                   {"tumor_decision_threshold", c.pipeline.tumor_decision_threshold},
                   {"aggregation", aggregation_name(c.pipeline.aggregation)},
                   {"top_k", c.pipeline.top_k},
                   {"validation_fraction", c.pipeline.validation_fraction}};
  j["train_tumor"] = train_json(c.train_tumor);
  j["train_responder"] = train_json(c.train_responder);
  j["eval"] = {{"folds", c.eval.folds},
               {"repeats", c.eval.repeats},
               {"split", c.eval.split},
               {"tps_threshold", c.eval.tps_threshold},
               {"scores", c.eval.scores},
               {"threshold", opt(c.eval.threshold)},
               {"threshold_policy", threshold_policy_name(c.eval.threshold_policy)}};
  j["annotate"] = {{"host", c.annotate.host}, {"port", c.annotate.port}};
  j["heatmap"] = {{"patient", c.heatmap.patient}, {"max_tiles", c.heatmap.max_tiles}};
  return j;
}

RunConfig config_from_json(const json &j) {
  json base = json::parse(config_to_json(RunConfig{}).dump());
  json overlay = j;
  // run.json carries an informational "run" block next to the config.
  if (overlay.is_object())
    overlay.erase("run");
  merge_strict(base, overlay, "");
  return decode(base);
}

RunConfig load_config(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  MILR_REQUIRE(in.good(), ErrorCode::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedJson, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void config_set(RunConfig &cfg, const std::string &pointer, const json &value) {
  json j = json::parse(config_to_json(cfg).dump());
  json::json_pointer ptr;
  try {
    ptr = json::json_pointer(pointer);
  } catch (const json::exception &e) {
    fail(ErrorCode::InvalidArgument, "bad config pointer '" + pointer + "'");
  }
  MILR_REQUIRE(!ptr.empty() && j.contains(ptr), ErrorCode::InvalidArgument,
               "unknown config key '" + pointer + "'");
  MILR_REQUIRE(!j.at(ptr).is_object() && compatible(j.at(ptr), value),
               ErrorCode::InvalidArgument, "config key '" + pointer + "' has the wrong type");
  j[ptr] = value;
  cfg = decode(j);
}

} // namespace milr
