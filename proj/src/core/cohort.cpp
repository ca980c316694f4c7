// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "cohort.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "error.hpp"
#include "synth.hpp"

namespace milr {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

std::vector<TileRecord> tile_cohort(const fs::path &cohort_dir,
                                    const CohortManifest &manifest,
                                    int tile_size, double min_tissue_frac,
                                    std::optional<int> threshold_override) {
  std::vector<TileRecord> out;
  for (const auto &p : manifest.patients)
    for (const auto &rel : p.slides) {
      const SlideImage slide = load_slide(cohort_dir, rel);
      const TissueMask mask = segment_tissue(slide, threshold_override);
      auto tiles = tile_slide(slide, mask, tile_size, min_tissue_frac);
      out.insert(out.end(), tiles.begin(), tiles.end());
    }
  return out;
}

std::string tile_to_json_line(const TileRecord &t) {
  ordered_json j = {{"slide", t.slide_id},
                    {"grid_x", t.grid_x},
                    {"grid_y", t.grid_y},
                    {"origin_x", t.origin_x},
                    {"origin_y", t.origin_y},
                    {"tile_size", t.tile_size},
                    {"tissue_fraction", t.tissue_fraction},
                    {"tumor_label", t.tumor_label ? ordered_json(tumor_label_name(*t.tumor_label))
                                                  : ordered_json(nullptr)},
                    {"aug_id", t.aug_id},
                    {"transform", dihedral_name(t.transform)}};
  return j.dump();
}

TileRecord tile_from_json_line(const std::string &line) {
  TileRecord t;
  try {
    const json j = json::parse(line);
    t.slide_id = j.at("slide").get<std::string>();
    t.grid_x = j.at("grid_x").get<int>();
    t.grid_y = j.at("grid_y").get<int>();
    t.origin_x = j.at("origin_x").get<int>();
    t.origin_y = j.at("origin_y").get<int>();
    t.tile_size = j.at("tile_size").get<int>();
    t.tissue_fraction = j.at("tissue_fraction").get<double>();
    if (j.contains("tumor_label") && !j.at("tumor_label").is_null())
      t.tumor_label = parse_tumor_label(j.at("tumor_label").get<std::string>());
    t.aug_id = j.value("aug_id", 0);
    const std::string tr = j.value("transform", std::string("identity"));
    bool found = false;
    for (Dihedral d : kDihedralOrder)
      if (tr == dihedral_name(d)) {
        t.transform = d;
        found = true;
      }
    MILR_REQUIRE(found, ErrorCode::MalformedJson, "unknown transform '" + tr + "'");
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedJson, std::string("tile record: ") + e.what());
  }
  return t;
}

void write_tiles(const std::vector<TileRecord> &tiles, const fs::path &path) {
  std::ofstream out(path, std::ios::binary);
  MILR_REQUIRE(out.good(), ErrorCode::Io, "cannot write " + path.string());
  for (const auto &t : tiles)
    out << tile_to_json_line(t) << '\n';
  MILR_REQUIRE(out.good(), ErrorCode::Io, "write failed for " + path.string());
}

std::vector<TileRecord> read_tiles(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  MILR_REQUIRE(in.good(), ErrorCode::Io, "cannot read " + path.string());
  std::vector<TileRecord> tiles;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty())
      tiles.push_back(tile_from_json_line(line));
  return tiles;
}

TileLabels truth_labels(const fs::path &cohort_dir, const CohortManifest &manifest,
                        int tile_size) {
  TileLabels labels;
  for (const auto &p : manifest.patients)
    for (const auto &rel : p.slides) {
      const fs::path png = cohort_dir / rel;
      const std::string id = slide_id_from_path(rel);
      if (!fs::exists(png.parent_path() / (id + ".truth.json")))
        continue;
      const GroundTruth gt = read_truth(png.parent_path(), id, true);
      for (const auto &tt : label_tiles(gt.tissue_mask, gt.tumor_mask, tile_size,
                                        gt.tumor_tile_threshold))
        labels[{id, tt.grid_x, tt.grid_y}] =
            tt.is_tumor_tile ? TumorLabel::Tumor : TumorLabel::NonTumor;
    }
  return labels;
}

TileLabels read_label_snapshot(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  MILR_REQUIRE(in.good(), ErrorCode::Io, "cannot read " + path.string());
  TileLabels labels;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty())
      continue;
    try {
      const json j = json::parse(line);
      labels[{j.at("slide").get<std::string>(), j.at("x").get<int>(), j.at("y").get<int>()}] =
          parse_tumor_label(j.at("label").get<std::string>());
    } catch (const json::exception &e) {
      fail(ErrorCode::MalformedJson,
           path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return labels;
}

std::size_t attach_labels(std::vector<TileRecord> &tiles, const TileLabels &labels) {
  std::size_t n = 0;
  for (auto &t : tiles) {
    const auto it = labels.find(key_of(t));
    if (it != labels.end()) {
      t.tumor_label = it->second;
      ++n;
    }
  }
  return n;
}

std::vector<PatientData> build_patients(const CohortManifest &manifest,
                                        const std::vector<TileRecord> &tiles) {
  std::map<std::string, std::vector<TileRecord>> by_slide;
  for (const auto &t : tiles)
    by_slide[t.slide_id].push_back(t);
  std::vector<PatientData> out;
  for (const auto &p : manifest.patients) {
    PatientData d;
    d.patient_id = p.id;
    d.response = p.response == Response::Responder ? 1 : 0;
    d.split = p.split;
    for (const auto &rel : p.slides) {
      const auto it = by_slide.find(slide_id_from_path(rel));
      if (it != by_slide.end())
        d.tiles.insert(d.tiles.end(), it->second.begin(), it->second.end());
    }
    out.push_back(std::move(d));
  }
  return out;
}

FeatureStore extract_cohort_features(const fs::path &cohort_dir,
                                     const CohortManifest &manifest,
                                     const std::vector<TileRecord> &tiles,
                                     const PipelineConfig &cfg) {
  std::map<std::string, std::vector<TileRecord>> by_slide;
  for (const auto &t : tiles)
    by_slide[t.slide_id].push_back(t);
  FeatureStore store(cfg.patch_grid(), kHandcraftedDim);
  for (const auto &p : manifest.patients)
    for (const auto &rel : p.slides) {
      const auto it = by_slide.find(slide_id_from_path(rel));
      if (it == by_slide.end())
        continue;
      const SlideImage slide = load_slide(cohort_dir, rel);
      extract_tile_features(slide.pixels, it->second, cfg, store);
    }
  return store;
}

GrayImage truth_tumor_mask(const fs::path &cohort_dir, const std::string &slide_path) {
  const fs::path png = cohort_dir / slide_path;
  return read_truth(png.parent_path(), slide_id_from_path(slide_path), true).tumor_mask;
}

} // namespace milr
