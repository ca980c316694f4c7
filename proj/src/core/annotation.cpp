// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "annotation.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "cohort.hpp"
#include "error.hpp"

namespace milr {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::string log_entry_to_json(const LogEntry &e) {
  ordered_json j = {{"seq", e.seq}};
  if (e.undo) {
    j["undo"] = true;
    j["target"] = e.target;
  }
  j["slide"] = e.record.slide_id;
  j["x"] = e.record.grid_x;
  j["y"] = e.record.grid_y;
  if (!e.undo)
    j["label"] = tumor_label_name(e.record.label);
  j["annotator"] = e.record.annotator;
  j["timestamp"] = e.record.timestamp;
  return j.dump();
}

LogEntry log_entry_from_json(const std::string &line) {
  LogEntry e;
  try {
    const json j = json::parse(line);
    e.seq = j.at("seq").get<std::uint64_t>();
    e.undo = j.value("undo", false);
    if (e.undo)
      e.target = j.at("target").get<std::uint64_t>();
    e.record.slide_id = j.at("slide").get<std::string>();
    e.record.grid_x = j.at("x").get<int>();
    e.record.grid_y = j.at("y").get<int>();
    if (!e.undo)
      e.record.label = parse_tumor_label(j.at("label").get<std::string>());
    e.record.annotator = j.at("annotator").get<std::string>();
    e.record.timestamp = j.at("timestamp").get<std::int64_t>();
  } catch (const json::exception &ex) {
    fail(ErrorCode::MalformedJson, std::string("label log entry: ") + ex.what());
  }
  return e;
}

namespace {

std::set<std::uint64_t> retracted(const std::vector<LogEntry> &log) {
  std::set<std::uint64_t> out;
  for (const auto &e : log)
    if (e.undo)
      out.insert(e.target);
  return out;
}

} // namespace

std::map<TileKey, LabelRecord> fold_label_log(const std::vector<LogEntry> &log) {
  const auto gone = retracted(log);
  std::map<TileKey, LabelRecord> state;
  for (const auto &e : log)
    if (!e.undo && !gone.count(e.seq))
      state[{e.record.slide_id, e.record.grid_x, e.record.grid_y}] = e.record;
  return state;
}

std::optional<LogEntry> undo_candidate(const std::vector<LogEntry> &log,
                                       const std::string &annotator) {
  const auto gone = retracted(log);
  for (auto it = log.rbegin(); it != log.rend(); ++it)
    if (!it->undo && !gone.count(it->seq) && it->record.annotator == annotator)
      return *it;
  return std::nullopt;
}

std::vector<LogEntry> read_label_log(const fs::path &path) {
  std::vector<LogEntry> log;
  std::ifstream in(path, std::ios::binary);
  if (!in)
    return log;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty())
      log.push_back(log_entry_from_json(line));
  return log;
}

LabelLog::LabelLog(fs::path path) : path_(std::move(path)) {
  if (fs::exists(path_))
    entries_ = read_label_log(path_);
  out_.open(path_, std::ios::binary | std::ios::app);
  MILR_REQUIRE(out_.good(), ErrorCode::UnwritableLabels,
               "cannot append to " + path_.string());
}

void LabelLog::write(const LogEntry &e) {
  out_ << log_entry_to_json(e) << '\n';
  out_.flush();
  MILR_REQUIRE(out_.good(), ErrorCode::UnwritableLabels,
               "write failed for " + path_.string());
  entries_.push_back(e);
}

LogEntry LabelLog::append(LabelRecord record) {
  LogEntry e;
  e.seq = entries_.empty() ? 1 : entries_.back().seq + 1;
  e.record = std::move(record);
  write(e);
  return e;
}

LogEntry LabelLog::undo_last(const std::string &annotator, std::int64_t timestamp) {
  const auto target = undo_candidate(entries_, annotator);
  if (!target)
    fail(ErrorCode::NothingToUndo, "annotator '" + annotator + "' has nothing to undo");
  LogEntry e;
  e.seq = entries_.empty() ? 1 : entries_.back().seq + 1;
  e.undo = true;
  e.target = target->seq;
  e.record = target->record;
  e.record.timestamp = timestamp;
  write(e);
  return e;
}

std::map<TileKey, LabelRecord> LabelLog::effective() const {
  return fold_label_log(entries_);
}

std::size_t export_labels(const fs::path &log_path, const fs::path &out) {
  const auto state = fold_label_log(read_label_log(log_path));
  std::ofstream o(out, std::ios::binary);
  MILR_REQUIRE(o.good(), ErrorCode::Io, "cannot write " + out.string());
  for (const auto &[key, r] : state) {
    ordered_json j = {{"slide", r.slide_id},
                      {"x", r.grid_x},
                      {"y", r.grid_y},
                      {"label", tumor_label_name(r.label)},
                      {"annotator", r.annotator},
                      {"timestamp", r.timestamp}};
    o << j.dump() << '\n';
  }
  MILR_REQUIRE(o.good(), ErrorCode::Io, "write failed for " + out.string());
  return state.size();
}

std::vector<TileRecord> service_tiles(const ServiceConfig &cfg) {
  const fs::path tiles = cfg.cohort_dir / kTilesFile;
  if (fs::exists(tiles)) {
    auto out = read_tiles(tiles);
    std::erase_if(out, [](const TileRecord &t) { return t.augmented(); });
    return out;
  }
  return tile_cohort(cfg.cohort_dir, read_cohort(cfg.cohort_dir), cfg.tile_size,
                     cfg.min_tissue_frac);
}

// ---------------------------------------------------------------------------

namespace {

constexpr int kPageSize = 50;

constexpr const char *kFallbackPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>milr annotate</title></head>
<body><h1>milr tile annotation</h1>
<p>The labeling UI assets were not found. The JSON API is live under /api.</p>
</body></html>
)";

std::int64_t utc_now() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

int http_status(ErrorCode code) {
  switch (code) {
  case ErrorCode::UnknownTile:
  case ErrorCode::MissingSlide:
    return 404;
  case ErrorCode::NothingToUndo:
    return 409;
  case ErrorCode::UnwritableLabels:
  case ErrorCode::Io:
    return 500;
  default:
    return 400;
  }
}

void send_error(httplib::Response &res, int status, const std::string &code,
                const std::string &message) {
  res.status = status;
  res.set_content(json{{"error", code}, {"message", message}}.dump(), "application/json");
}

void send_error(httplib::Response &res, const Error &e) {
  send_error(res, http_status(e.code()), std::string(error_code_name(e.code())), e.what());
}

} // namespace

struct AnnotationService::Impl {
  ServiceConfig cfg;
  CohortManifest manifest;
  std::vector<TileRecord> tiles;
  std::map<TileKey, std::size_t> tile_index;
  std::map<std::string, std::string> slide_paths; // slide id -> relative path

  httplib::Server server;
  std::thread thread;
  int bound_port = 0;
  bool running = false;
  std::mutex state_mutex;
  std::condition_variable stopped;

  std::mutex log_mutex;
  std::unique_ptr<LabelLog> log;

  std::mutex image_mutex;
  std::map<TileKey, std::string> png_cache;
  std::string cached_slide_id;
  std::optional<SlideImage> cached_slide;

  json tile_json(const TileRecord &t, const std::map<TileKey, LabelRecord> &state) const {
    const auto it = state.find(key_of(t));
    return {{"slide", t.slide_id},
            {"x", t.grid_x},
            {"y", t.grid_y},
            {"tissue_fraction", t.tissue_fraction},
            {"label", it == state.end() ? json(nullptr) : json(tumor_label_name(it->second.label))},
            {"image", "/api/tile/" + t.slide_id + "/" + std::to_string(t.grid_x) + "/" +
                          std::to_string(t.grid_y) + "/image.png"}};
  }

  std::map<TileKey, LabelRecord> state() {
    std::lock_guard lock(log_mutex);
    return log->effective();
  }

  std::string tile_png(const TileRecord &t) {
    std::lock_guard lock(image_mutex);
    const TileKey key = key_of(t);
    if (const auto it = png_cache.find(key); it != png_cache.end())
      return it->second;
    if (cached_slide_id != t.slide_id) {
      cached_slide = load_slide(cfg.cohort_dir, slide_paths.at(t.slide_id));
      cached_slide_id = t.slide_id;
    }
    const auto bytes = encode_png_rgb(extract_tile(cached_slide->pixels, t));
    return png_cache.emplace(key, std::string(bytes.begin(), bytes.end())).first->second;
  }

  void routes() {
    server.set_exception_handler([](const httplib::Request &, httplib::Response &res,
                                    std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const Error &e) {
        send_error(res, e);
      } catch (const std::exception &e) {
        send_error(res, 500, "Internal", e.what());
      }
    });

    server.Get("/api/cohort", [this](const httplib::Request &, httplib::Response &res) {
      std::map<std::string, int> counts;
      for (const auto &t : tiles)
        ++counts[t.slide_id];
      json patients = json::array();
      for (const auto &p : manifest.patients) {
        json slides = json::array();
        for (const auto &rel : p.slides) {
          const std::string id = slide_id_from_path(rel);
          slides.push_back({{"id", id}, {"n_tiles", counts.count(id) ? counts[id] : 0}});
        }
        patients.push_back({{"id", p.id}, {"slides", slides}});
      }
      res.set_content(json{{"version", 1},
                           {"n_tiles", tiles.size()},
                           {"page_size", kPageSize},
                           {"patients", patients}}
                          .dump(),
                      "application/json");
    });

    server.Get("/api/tiles", [this](const httplib::Request &req, httplib::Response &res) {
      const std::string slide = req.get_param_value("slide");
      const std::string status =
          req.has_param("status") ? req.get_param_value("status") : "all";
      if (status != "all" && status != "labeled" && status != "unlabeled")
        return send_error(res, 400, "InvalidArgument", "status must be all, labeled or unlabeled");
      int page = 0;
      if (req.has_param("page")) {
        try {
          page = std::stoi(req.get_param_value("page"));
        } catch (const std::exception &) {
          page = -1;
        }
        if (page < 0)
          return send_error(res, 400, "InvalidArgument", "page must be a non-negative integer");
      }
      if (!slide.empty() && !slide_paths.count(slide))
        return send_error(res, 404, "MissingSlide", "unknown slide '" + slide + "'");
      const auto st = state();
      std::vector<const TileRecord *> hits;
      for (const auto &t : tiles) {
        if (!slide.empty() && t.slide_id != slide)
          continue;
        const bool labeled = st.count(key_of(t)) != 0;
        if ((status == "labeled" && !labeled) || (status == "unlabeled" && labeled))
          continue;
        hits.push_back(&t);
      }
      json page_tiles = json::array();
      const std::size_t begin = static_cast<std::size_t>(page) * kPageSize;
      for (std::size_t i = begin; i < hits.size() && i < begin + kPageSize; ++i)
        page_tiles.push_back(tile_json(*hits[i], st));
      const std::size_t pages = (hits.size() + kPageSize - 1) / kPageSize;
      res.set_content(json{{"page", page},
                           {"page_size", kPageSize},
                           {"pages", pages},
                           {"total", hits.size()},
                           {"tiles", page_tiles}}
                          .dump(),
                      "application/json");
    });

    server.Get(R"(/api/tile/([^/]+)/(-?\d+)/(-?\d+)/image\.png)",
               [this](const httplib::Request &req, httplib::Response &res) {
                 const TileKey key{req.matches[1], std::stoi(req.matches[2]),
                                   std::stoi(req.matches[3])};
                 const auto it = tile_index.find(key);
                 if (it == tile_index.end())
                   return send_error(res, 404, "UnknownTile", "no such tile");
                 res.set_header("Cache-Control", "max-age=3600");
                 res.set_content(tile_png(tiles[it->second]), "image/png");
               });

    server.Post("/api/label", [this](const httplib::Request &req, httplib::Response &res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::exception &e) {
        return send_error(res, 400, "MalformedJson", e.what());
      }
      LabelRecord r;
      try {
        r.slide_id = body.at("slide").get<std::string>();
        r.grid_x = body.at("x").get<int>();
        r.grid_y = body.at("y").get<int>();
        r.label = parse_tumor_label(body.at("label").get<std::string>());
        r.annotator = body.value("annotator", std::string("anonymous"));
      } catch (const json::exception &e) {
        return send_error(res, 400, "MalformedJson", e.what());
      }
      if (!tile_index.count({r.slide_id, r.grid_x, r.grid_y}))
        return send_error(res, 404, "UnknownTile",
                          "tile " + r.slide_id + " (" + std::to_string(r.grid_x) + "," +
                              std::to_string(r.grid_y) + ") does not exist");
      r.timestamp = utc_now();
      LogEntry e;
      {
        std::lock_guard lock(log_mutex);
        e = log->append(r);
      }
      res.set_content(log_entry_to_json(e), "application/json");
    });

    server.Post("/api/undo", [this](const httplib::Request &req, httplib::Response &res) {
      std::string annotator = "anonymous";
      if (!req.body.empty()) {
        try {
          annotator = json::parse(req.body).value("annotator", annotator);
        } catch (const json::exception &e) {
          return send_error(res, 400, "MalformedJson", e.what());
        }
      }
      LogEntry e;
      {
        std::lock_guard lock(log_mutex);
        e = log->undo_last(annotator, utc_now());
      }
      res.set_content(log_entry_to_json(e), "application/json");
    });

    server.Get("/api/progress", [this](const httplib::Request &, httplib::Response &res) {
      const auto st = state();
      std::size_t labeled = 0;
      for (const auto &[key, r] : st)
        labeled += tile_index.count(key);
      res.set_content(json{{"labeled", labeled}, {"total", tiles.size()}}.dump(),
                      "application/json");
    });

    if (!cfg.static_dir.empty() && fs::is_directory(cfg.static_dir)) {
      server.set_mount_point("/", cfg.static_dir.string());
    } else {
      server.Get("/", [](const httplib::Request &, httplib::Response &res) {
        res.set_content(kFallbackPage, "text/html");
      });
    }
  }
};

AnnotationService::AnnotationService(ServiceConfig cfg, std::vector<TileRecord> tiles)
    : impl_(std::make_unique<Impl>()) {
  impl_->cfg = std::move(cfg);
  if (impl_->cfg.labels_path.empty())
    impl_->cfg.labels_path = impl_->cfg.cohort_dir / kLabelLogFile;
  impl_->manifest = read_cohort(impl_->cfg.cohort_dir);
  for (const auto &p : impl_->manifest.patients)
    for (const auto &rel : p.slides)
      impl_->slide_paths[slide_id_from_path(rel)] = rel;
  for (auto &t : tiles) {
    t.tumor_label.reset();
    if (t.augmented())
      continue;
    impl_->tile_index[key_of(t)] = impl_->tiles.size();
    impl_->tiles.push_back(t);
  }
}

AnnotationService::~AnnotationService() { stop(); }

void AnnotationService::start() {
  Impl &s = *impl_;
  MILR_REQUIRE(!s.running, ErrorCode::InvalidArgument, "service already running");
  s.log = std::make_unique<LabelLog>(s.cfg.labels_path);
  s.routes();
  // Without SO_REUSEPORT a second service on the same port fails to bind.
  s.server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const char *>(&yes),
               sizeof(yes));
  });
  if (s.cfg.port == 0) {
    s.bound_port = s.server.bind_to_any_port(s.cfg.host);
    MILR_REQUIRE(s.bound_port > 0, ErrorCode::PortInUse, "no free port on " + s.cfg.host);
  } else {
    MILR_REQUIRE(s.server.bind_to_port(s.cfg.host, s.cfg.port), ErrorCode::PortInUse,
                 "cannot bind " + s.cfg.host + ":" + std::to_string(s.cfg.port));
    s.bound_port = s.cfg.port;
  }
  {
    std::lock_guard lock(s.state_mutex);
    s.running = true;
  }
  s.thread = std::thread([&s] { s.server.listen_after_bind(); });
  s.server.wait_until_ready();
}

void AnnotationService::stop() {
  if (!impl_)
    return;
  std::lock_guard lock(impl_->state_mutex);
  if (!impl_->running)
    return;
  impl_->server.stop();
  if (impl_->thread.joinable())
    impl_->thread.join();
  impl_->running = false;
  impl_->stopped.notify_all();
}

void AnnotationService::wait() {
  std::unique_lock lock(impl_->state_mutex);
  impl_->stopped.wait(lock, [this] { return !impl_->running; });
}

int AnnotationService::port() const noexcept { return impl_->bound_port; }

} // namespace milr
