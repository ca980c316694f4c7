// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

// Command-line front end. Talks to the core only through the C API.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "milr/milr.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

enum class Kind { String, Int, UInt, Real, Bool, Nullable };

/// A flag that overrides one config field.
struct Override {
  std::string flag;
  std::string pointer;
  Kind kind;
  std::string help;
};

struct Command {
  CLI::App *app = nullptr;
  std::function<milr_status(const milr_config *, char **)> run;
  std::vector<Override> overrides;
  std::map<std::string, std::string> values; // flag -> raw value
};

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

std::vector<Override> common_overrides() {
  return {{"--cohort", "/paths/cohort", Kind::String, "cohort directory"},
          {"--out", "/paths/out", Kind::String, "output directory (default: the cohort)"},
          {"--seed", "/seed", Kind::UInt, "master seed"}};
}

std::vector<Override> pipeline_overrides() {
  return {{"--tile-size", "/tiling/tile_size", Kind::Int, "tile edge in pixels"},
          {"--min-tissue-frac", "/tiling/min_tissue_frac", Kind::Real, "tile tissue cut-off"},
          {"--patch-size", "/features/patch_size", Kind::Int, "sub-patch edge in pixels"},
          {"--labels", "/paths/labels", Kind::String, "tile labels: truth or a labels.jsonl"},
          {"--tiles", "/paths/tiles", Kind::String, "tiles.jsonl to use"},
          {"--features", "/paths/features", Kind::String, "features.milf to use"},
          {"--mode", "/pipeline/mode", Kind::String, "two_step or single_step"},
          {"--augment", "/pipeline/augment", Kind::Bool, "dihedral tile augmentation (true|false)"},
          {"--responder-weight", "/pipeline/responder_weight", Kind::Real, "responder bag weight"},
          {"--tumor-threshold", "/pipeline/tumor_decision_threshold", Kind::Real,
           "tumor filter probability cut"},
          {"--aggregation", "/pipeline/aggregation", Kind::String, "mean, max or top_k_mean"}};
}

std::string encode(const Override &o, const std::string &raw) {
  switch (o.kind) {
  case Kind::String:
    return nlohmann::json(raw).dump();
  case Kind::Bool:
    if (raw == "true" || raw == "1" || raw == "on" || raw == "yes")
      return "true";
    if (raw == "false" || raw == "0" || raw == "off" || raw == "no")
      return "false";
    throw CLI::ValidationError(o.flag, "expects true or false");
  case Kind::Nullable:
    if (raw == "null" || raw == "auto")
      return "null";
    [[fallthrough]];
  case Kind::Int:
  case Kind::UInt:
  case Kind::Real: {
    try {
      std::size_t used = 0;
      if (o.kind == Kind::Int) {
        const long long v = std::stoll(raw, &used);
        if (used == raw.size())
          return std::to_string(v);
      } else if (o.kind == Kind::UInt) {
        if (!raw.empty() && raw[0] != '-') {
          const unsigned long long v = std::stoull(raw, &used);
          if (used == raw.size())
            return std::to_string(v);
        }
      } else {
        std::stod(raw, &used);
        if (used == raw.size())
          return raw;
      }
    } catch (const std::exception &) {
    }
    throw CLI::ValidationError(o.flag, "expects a number, got '" + raw + "'");
  }
  }
  return raw;
}

void add_overrides(Command &c, std::vector<Override> list) {
  for (auto &o : list) {
    c.overrides.push_back(o);
    c.app->add_option_function<std::string>(
        o.flag, [&c, flag = o.flag](const std::string &v) { c.values[flag] = v; }, o.help);
  }
}

int report_failure(milr_status s) {
  std::cerr << "error: " << milr_status_name(s) << ": " << milr_last_error() << "\n";
  return kExitDomain;
}

int serve(const milr_config *cfg) {
  milr_service *svc = nullptr;
  const milr_status s = milr_service_start(cfg, &svc);
  if (s != MILR_OK)
    return report_failure(s);
  std::cout << "serving on port " << milr_service_port(svc) << "; Ctrl-C to stop"
            << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop)
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  milr_service_stop(svc);
  milr_service_free(svc);
  return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"milr: two-step attention MIL for IHC responder identification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(milr_version()));

  std::string config_path;
  std::string import_source;
  std::vector<std::unique_ptr<Command>> commands;

  auto make = [&](CLI::App *parent, const std::string &name, const std::string &desc,
                  std::function<milr_status(const milr_config *, char **)> run,
                  std::vector<Override> extra) -> Command & {
    auto c = std::make_unique<Command>();
    c->app = parent->add_subcommand(name, desc);
    c->run = std::move(run);
    c->app->add_option("--config", config_path, "JSON run configuration")
        ->check(CLI::ExistingFile);
    add_overrides(*c, common_overrides());
    add_overrides(*c, std::move(extra));
    commands.push_back(std::move(c));
    return *commands.back();
  };

  auto *synth = app.add_subcommand("synth", "synthetic cohort generator");
  synth->require_subcommand(1);
  make(synth, "gen", "generate a synthetic cohort into --out", milr_synth_generate,
       {{"--patients", "/synth/n_patients", Kind::Int, "training patients"},
        {"--test-patients", "/synth/n_test", Kind::Int, "held-out patients"},
        {"--responder-fraction", "/synth/responder_fraction", Kind::Real, "responder share"},
        {"--slide-size", "/synth/slide_size", Kind::Int, "slide edge in pixels"},
        {"--tile-size", "/synth/tile_size", Kind::Int, "tile edge used for sizing tissue"},
        {"--pattern-link", "/synth/pattern_link", Kind::String,
         "reactive_vs_constitutive, tps_only or none"},
        {"--tps-mean", "/synth/tps_mean", Kind::Real, "mean TPS"},
        {"--tps-sd", "/synth/tps_sd", Kind::Real, "TPS spread"}});

  make(&app, "tile", "segment tissue and tile every slide", milr_tile,
       {{"--tile-size", "/tiling/tile_size", Kind::Int, "tile edge in pixels"},
        {"--min-tissue-frac", "/tiling/min_tissue_frac", Kind::Real, "tile tissue cut-off"},
        {"--otsu-threshold", "/tiling/otsu_threshold", Kind::Nullable,
         "fixed luminance threshold or auto"}});

  auto *annotate = app.add_subcommand("annotate", "tile labeling service");
  annotate->require_subcommand(1);
  Command &serve_cmd = make(annotate, "serve", "serve the labeling API and UI", nullptr,
                            {{"--host", "/annotate/host", Kind::String, "bind address"},
                             {"--port", "/annotate/port", Kind::Int, "port (0 picks one)"},
                             {"--ui", "/paths/ui", Kind::String, "UI asset directory"},
                             {"--tile-size", "/tiling/tile_size", Kind::Int, "tile edge"}});
  make(annotate, "export", "resolve labels.log.jsonl into labels.jsonl", milr_export_labels, {});

  auto *features = app.add_subcommand("features", "instance features");
  features->require_subcommand(1);
  make(features, "extract", "handcrafted stain features per sub-patch", milr_features_extract,
       pipeline_overrides());
  Command &import_cmd =
      make(features, "import", "import an external MILF feature file",
           [&](const milr_config *c, char **s) {
             return milr_features_import(c, import_source.c_str(), s);
           },
           pipeline_overrides());
  import_cmd.app->add_option("source", import_source, "MILF file with its .index.json")
      ->required()
      ->check(CLI::ExistingFile);

  auto with = [](std::vector<Override> a, std::vector<Override> b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };

  auto *train = app.add_subcommand("train", "model training");
  train->require_subcommand(1);
  make(train, "tumor", "train the tumor recognition model", milr_train_tumor,
       with(pipeline_overrides(),
            {{"--epochs", "/train_tumor/epochs", Kind::Int, "training epochs"}}));
  make(train, "responder", "train the responder identification model", milr_train_responder,
       with(pipeline_overrides(),
            {{"--epochs", "/train_responder/epochs", Kind::Int, "training epochs"}}));

  const std::vector<Override> model_paths = {
      {"--tumor-model", "/paths/tumor_model", Kind::String, "tumor model JSON"},
      {"--responder-model", "/paths/responder_model", Kind::String, "responder model JSON"},
      {"--split", "/eval/split", Kind::String, "patients: test, train or all"}};

  make(&app, "predict", "patient scores into predictions.jsonl", milr_predict,
       with(pipeline_overrides(), model_paths));

  const std::vector<Override> cv_flags = {
      {"--folds", "/eval/folds", Kind::Int, "CV folds"},
      {"--repeats", "/eval/repeats", Kind::Int, "CV repetitions"},
      {"--tumor-epochs", "/train_tumor/epochs", Kind::Int, "tumor model epochs"},
      {"--responder-epochs", "/train_responder/epochs", Kind::Int, "responder model epochs"}};
  make(&app, "cv", "modified repeated k-fold cross-validation", milr_cv,
       with(with(pipeline_overrides(), cv_flags),
            {{"--tumor-model", "/paths/tumor_model", Kind::String, "fixed tumor model"}}));

  auto *eval = app.add_subcommand("eval", "benchmarks");
  eval->require_subcommand(1);
  make(eval, "tps", "TPS estimates and the TPS enrichment rule", milr_eval_tps,
       {{"--split", "/eval/split", Kind::String, "patients: test, train or all"},
        {"--tps-threshold", "/eval/tps_threshold", Kind::Real, "TPS rule cut"},
        {"--labels", "/paths/labels", Kind::String, "tile labels: truth or a labels.jsonl"}});
  make(eval, "enrich", "enrichment report for a score threshold", milr_eval_enrich,
       {{"--scores", "/eval/scores", Kind::String, "predictions or tps"},
        {"--predictions", "/paths/predictions", Kind::String, "predictions.jsonl"},
        {"--threshold", "/eval/threshold", Kind::Nullable, "score cut, or auto"},
        {"--policy", "/eval/threshold_policy", Kind::String, "full_recall or max_f1"}});

  make(&app, "heatmap", "attention heat maps of top-scoring tiles", milr_heatmap,
       with(with(pipeline_overrides(), model_paths),
            {{"--patient", "/heatmap/patient", Kind::String, "patient id"},
             {"--max-tiles", "/heatmap/max_tiles", Kind::Int, "tiles per patient"}}));

  make(&app, "ablation", "single step vs two step with and without augmentation vs TPS",
       milr_ablation, with(pipeline_overrides(), cv_flags));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help() << std::flush;
    return kExitUsage;
  }

  Command *chosen = nullptr;
  for (auto &c : commands)
    if (c->app->parsed())
      chosen = c.get();
  if (!chosen) {
    std::cerr << app.help();
    return kExitUsage;
  }

  milr_config *cfg = nullptr;
  milr_status s = config_path.empty() ? milr_config_new(&cfg)
                                      : milr_config_load(config_path.c_str(), &cfg);
  if (s != MILR_OK) {
    std::cerr << "error: " << milr_status_name(s) << ": " << milr_last_error() << "\n";
    return kExitUsage;
  }
  for (const auto &o : chosen->overrides) {
    const auto it = chosen->values.find(o.flag);
    if (it == chosen->values.end())
      continue;
    std::string value;
    try {
      value = encode(o, it->second);
    } catch (const CLI::ParseError &e) {
      std::cerr << "error: " << e.what() << "\n\n" << chosen->app->help();
      milr_config_free(cfg);
      return kExitUsage;
    }
    s = milr_config_set(cfg, o.pointer.c_str(), value.c_str());
    if (s != MILR_OK) {
      std::cerr << "error: " << o.flag << ": " << milr_last_error() << "\n";
      milr_config_free(cfg);
      return kExitUsage;
    }
  }

  int code = kExitOk;
  if (chosen == &serve_cmd) {
    code = serve(cfg);
  } else {
    char *summary = nullptr;
    s = chosen->run(cfg, &summary);
    if (s != MILR_OK) {
      code = report_failure(s);
    } else {
      std::cout << summary << std::endl;
      milr_string_free(summary);
    }
  }
  milr_config_free(cfg);
  return code;
}
