// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "pipeline.hpp"
#include "slide_io.hpp"

namespace milr {

inline constexpr const char *kLabelLogFile = "labels.log.jsonl";

struct LabelRecord {
  std::string slide_id;
  int grid_x = 0;
  int grid_y = 0;
  TumorLabel label = TumorLabel::NonTumor;
  std::string annotator;
  std::int64_t timestamp = 0; // UTC seconds
};

/// One line of the label log. Undo entries carry the sequence number of
/// the label entry they retract.
struct LogEntry {
  std::uint64_t seq = 0;
  bool undo = false;
  std::uint64_t target = 0;
  LabelRecord record;
};

std::string log_entry_to_json(const LogEntry &e);
LogEntry log_entry_from_json(const std::string &line);

/// Effective labels: the latest non-retracted label entry per tile.
std::map<TileKey, LabelRecord> fold_label_log(const std::vector<LogEntry> &log);

/// The label entry `undo_last(annotator)` would retract, if any.
std::optional<LogEntry> undo_candidate(const std::vector<LogEntry> &log,
                                       const std::string &annotator);

std::vector<LogEntry> read_label_log(const std::filesystem::path &path);

/// Append-only event log; every write is flushed before returning.
class LabelLog {
public:
  /// Replays an existing log. Throws UnwritableLabels when the file cannot
  /// be opened for appending.
  explicit LabelLog(std::filesystem::path path);

  LogEntry append(LabelRecord record);
  /// Retracts the annotator's latest live label. Throws NothingToUndo.
  LogEntry undo_last(const std::string &annotator, std::int64_t timestamp);

  std::map<TileKey, LabelRecord> effective() const;
  const std::vector<LogEntry> &entries() const noexcept { return entries_; }

private:
  void write(const LogEntry &e);

  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<LogEntry> entries_;
};

/// Resolves the log into one label per tile and writes `out` as
/// `labels.jsonl` lines {slide, x, y, label, annotator, timestamp} in tile
/// order. Returns the number of labels written.
std::size_t export_labels(const std::filesystem::path &log_path,
                          const std::filesystem::path &out);

struct ServiceConfig {
  std::filesystem::path cohort_dir;
  std::filesystem::path labels_path; // defaults to cohort_dir/labels.log.jsonl
  std::filesystem::path static_dir;  // UI assets; empty for a built-in page
  std::string host = "127.0.0.1";
  int port = 8080; // 0 picks a free port
  int tile_size = 128;
  double min_tissue_frac = 0.05;
};

/// Tile labeling HTTP service. Runs on a background thread between
/// start() and stop().
class AnnotationService {
public:
  AnnotationService(ServiceConfig cfg, std::vector<TileRecord> tiles);
  ~AnnotationService();
  AnnotationService(const AnnotationService &) = delete;
  AnnotationService &operator=(const AnnotationService &) = delete;

  /// Binds and starts serving. Throws PortInUse or UnwritableLabels.
  void start();
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();
  int port() const noexcept;

private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Tiles for the service: `<cohort>/tiles.jsonl` when present, otherwise
/// tiles the cohort with the configured geometry.
std::vector<TileRecord> service_tiles(const ServiceConfig &cfg);

} // namespace milr
