// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "milr/milr.h"

#include <cstring>
#include <memory>
#include <new>
#include <string>

#include "annotation.hpp"
#include "config.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "mil.hpp"
#include "workflow.hpp"

struct milr_config {
  milr::RunConfig cfg;
};

struct milr_model {
  milr::MilModel model;
};

struct milr_service {
  std::unique_ptr<milr::AnnotationService> service;
};

namespace {

thread_local std::string g_last_error;

milr_status to_status(milr::ErrorCode code) {
  return static_cast<milr_status>(static_cast<int>(code) + 1);
}

template <class F> milr_status guarded(F &&f) {
  try {
    f();
    g_last_error.clear();
    return MILR_OK;
  } catch (const milr::Error &e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const nlohmann::json::exception &e) {
    g_last_error = e.what();
    return MILR_E_MALFORMED_JSON;
  } catch (const std::bad_alloc &) {
    g_last_error = "out of memory";
    return MILR_E_INTERNAL;
  } catch (const std::exception &e) {
    g_last_error = e.what();
    return MILR_E_INTERNAL;
  }
}

char *dup_string(const std::string &s) {
  char *out = static_cast<char *>(std::malloc(s.size() + 1));
  if (!out)
    throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void *p, const char *what) {
  MILR_REQUIRE(p != nullptr, milr::ErrorCode::InvalidArgument,
               std::string(what) + " must not be null");
}

using Command = nlohmann::ordered_json (*)(const milr::RunConfig &);

milr_status run(const milr_config *cfg, const char *name, Command cmd, char **summary) {
  return guarded([&] {
    need(cfg, "config");
    const auto result = cmd(cfg->cfg);
    milr::write_run_json(cfg->cfg, name);
    if (summary)
      *summary = dup_string(result.dump(2));
  });
}

} // namespace

extern "C" {

const char *milr_version(void) { return "0.1.0"; }

const char *milr_status_name(milr_status status) {
  if (status == MILR_OK)
    return "Ok";
  if (status == MILR_E_INTERNAL)
    return "Internal";
  const int i = static_cast<int>(status) - 1;
  if (i < 0 || i > static_cast<int>(milr::ErrorCode::ConfigInconsistent))
    return "Unknown";
  return milr::error_code_name(static_cast<milr::ErrorCode>(i)).data();
}

const char *milr_last_error(void) { return g_last_error.c_str(); }

void milr_string_free(char *s) { std::free(s); }

milr_status milr_config_new(milr_config **out) {
  return guarded([&] {
    need(out, "out");
    auto c = std::make_unique<milr_config>();
    c->cfg.resolve();
    *out = c.release();
  });
}

milr_status milr_config_from_json(const char *json, milr_config **out) {
  return guarded([&] {
    need(json, "json");
    need(out, "out");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception &e) {
      milr::fail(milr::ErrorCode::MalformedJson, e.what());
    }
    auto c = std::make_unique<milr_config>();
    c->cfg = milr::config_from_json(j);
    *out = c.release();
  });
}

milr_status milr_config_load(const char *path, milr_config **out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto c = std::make_unique<milr_config>();
    c->cfg = milr::load_config(path);
    *out = c.release();
  });
}

milr_status milr_config_set(milr_config *cfg, const char *pointer, const char *json_value) {
  return guarded([&] {
    need(cfg, "config");
    need(pointer, "pointer");
    need(json_value, "value");
    nlohmann::json v;
    try {
      v = nlohmann::json::parse(json_value);
    } catch (const nlohmann::json::exception &e) {
      milr::fail(milr::ErrorCode::InvalidArgument,
                 std::string("value for ") + pointer + " is not valid JSON");
    }
    milr::config_set(cfg->cfg, pointer, v);
  });
}

milr_status milr_config_to_json(const milr_config *cfg, char **out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    *out = dup_string(milr::config_to_json(cfg->cfg).dump(2));
  });
}

void milr_config_free(milr_config *cfg) { delete cfg; }

milr_status milr_synth_generate(const milr_config *cfg, char **summary) {
  return run(cfg, "synth gen", milr::cmd_synth_generate, summary);
}
milr_status milr_tile(const milr_config *cfg, char **summary) {
  return run(cfg, "tile", milr::cmd_tile, summary);
}
milr_status milr_features_extract(const milr_config *cfg, char **summary) {
  return run(cfg, "features extract", milr::cmd_features_extract, summary);
}
milr_status milr_features_import(const milr_config *cfg, const char *source, char **summary) {
  return guarded([&] {
    need(cfg, "config");
    need(source, "source");
    const auto result = milr::cmd_features_import(cfg->cfg, source);
    milr::write_run_json(cfg->cfg, "features import");
    if (summary)
      *summary = dup_string(result.dump(2));
  });
}
milr_status milr_train_tumor(const milr_config *cfg, char **summary) {
  return run(cfg, "train tumor", milr::cmd_train_tumor, summary);
}
milr_status milr_train_responder(const milr_config *cfg, char **summary) {
  return run(cfg, "train responder", milr::cmd_train_responder, summary);
}
milr_status milr_predict(const milr_config *cfg, char **summary) {
  return run(cfg, "predict", milr::cmd_predict, summary);
}
milr_status milr_cv(const milr_config *cfg, char **summary) {
  return run(cfg, "cv", milr::cmd_cv, summary);
}
milr_status milr_eval_tps(const milr_config *cfg, char **summary) {
  return run(cfg, "eval tps", milr::cmd_eval_tps, summary);
}
milr_status milr_eval_enrich(const milr_config *cfg, char **summary) {
  return run(cfg, "eval enrich", milr::cmd_eval_enrich, summary);
}
milr_status milr_heatmap(const milr_config *cfg, char **summary) {
  return run(cfg, "heatmap", milr::cmd_heatmap, summary);
}
milr_status milr_ablation(const milr_config *cfg, char **summary) {
  return run(cfg, "ablation", milr::cmd_ablation, summary);
}
milr_status milr_export_labels(const milr_config *cfg, char **summary) {
  return run(cfg, "annotate export", milr::cmd_export_labels, summary);
}

milr_status milr_model_load(const char *path, milr_model **out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto m = std::make_unique<milr_model>();
    m->model = milr::load_model(path);
    *out = m.release();
  });
}

milr_status milr_model_dim(const milr_model *model, size_t *d) {
  return guarded([&] {
    need(model, "model");
    need(d, "d");
    *d = static_cast<size_t>(model->model.train_config.dims.d);
  });
}

milr_status milr_model_predict(const milr_model *model, const double *instances, size_t k,
                               size_t d, double *probability, double *attention) {
  return guarded([&] {
    need(model, "model");
    need(instances, "instances");
    need(probability, "probability");
    MILR_REQUIRE(k > 0, milr::ErrorCode::InvalidArgument, "bag has no instances");
    Eigen::MatrixXd x(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
    for (size_t i = 0; i < k; ++i)
      for (size_t j = 0; j < d; ++j)
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = instances[i * d + j];
    const auto r = model->model.predict(x);
    *probability = r.p;
    if (attention)
      for (size_t i = 0; i < k; ++i)
        attention[i] = r.attention[static_cast<Eigen::Index>(i)];
  });
}

void milr_model_free(milr_model *model) { delete model; }

milr_status milr_service_start(const milr_config *cfg, milr_service **out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    const milr::RunConfig &c = cfg->cfg;
    milr::ServiceConfig sc;
    sc.cohort_dir = c.paths.cohort;
    sc.static_dir = c.paths.ui;
    sc.host = c.annotate.host;
    sc.port = c.annotate.port;
    sc.tile_size = c.tiling.tile_size;
    sc.min_tissue_frac = c.tiling.min_tissue_frac;
    auto s = std::make_unique<milr_service>();
    s->service = std::make_unique<milr::AnnotationService>(sc, milr::service_tiles(sc));
    s->service->start();
    *out = s.release();
  });
}

int milr_service_port(const milr_service *svc) { return svc ? svc->service->port() : 0; }

milr_status milr_service_wait(milr_service *svc) {
  return guarded([&] {
    need(svc, "service");
    svc->service->wait();
  });
}

milr_status milr_service_stop(milr_service *svc) {
  return guarded([&] {
    need(svc, "service");
    svc->service->stop();
  });
}

void milr_service_free(milr_service *svc) { delete svc; }

milr_status milr_roc_auc(const double *scores, const int *labels, size_t n, double *auc) {
  return guarded([&] {
    need(scores, "scores");
    need(labels, "labels");
    need(auc, "auc");
    *auc = milr::roc_auc({scores, n}, {labels, n});
  });
}

milr_status milr_pr_auc(const double *scores, const int *labels, size_t n, double *auc) {
  return guarded([&] {
    need(scores, "scores");
    need(labels, "labels");
    need(auc, "auc");
    *auc = milr::pr_auc({scores, n}, {labels, n});
  });
}

} // extern "C"
