// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "slide_io.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "error.hpp"

namespace milr {

using nlohmann::json;

const char *tumor_label_name(TumorLabel label) {
  return label == TumorLabel::Tumor ? "tumor" : "non_tumor";
}

TumorLabel parse_tumor_label(const std::string &s) {
  if (s == "tumor")
    return TumorLabel::Tumor;
  if (s == "non_tumor")
    return TumorLabel::NonTumor;
  fail(ErrorCode::InvalidArgument, "unknown tumor label '" + s + "'");
}

int otsu_threshold(std::span<const std::uint64_t, 256> histogram) {
  double total = 0.0, total_sum = 0.0;
  int nonempty = 0;
  for (int i = 0; i < 256; ++i) {
    total += static_cast<double>(histogram[i]);
    total_sum += static_cast<double>(i) * static_cast<double>(histogram[i]);
    nonempty += histogram[i] > 0;
  }
  MILR_REQUIRE(nonempty >= 2, ErrorCode::DegenerateHistogram,
               "histogram has fewer than two occupied levels");

  // Cumulative sums are exact integers below 2^53 for any realistic image,
  // so each candidate's score depends only on the histogram.
  double w0 = 0.0, sum0 = 0.0;
  double best = -1.0;
  int best_t = 0;
  for (int t = 0; t < 255; ++t) {
    w0 += static_cast<double>(histogram[t]);
    sum0 += static_cast<double>(t) * static_cast<double>(histogram[t]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0)
      continue;
    const double mu0 = sum0 / w0;
    const double mu1 = (total_sum - sum0) / w1;
    const double d = mu0 - mu1;
    const double score = (w0 / total) * (w1 / total) * d * d;
    if (score > best) {
      best = score;
      best_t = t;
    }
  }
  return best_t;
}

std::uint8_t luminance(Rgb c) noexcept {
  // Integer form of round(0.299 R + 0.587 G + 0.114 B); the weights sum to
  // 1000 so the result never exceeds 255.
  const int v = 299 * c.r + 587 * c.g + 114 * c.b;
  return static_cast<std::uint8_t>((v + 500) / 1000);
}

std::array<std::uint64_t, 256> luminance_histogram(const RgbImage &image) {
  std::array<std::uint64_t, 256> hist{};
  const auto px = image.bytes();
  for (std::size_t i = 0; i < px.size(); i += 3)
    ++hist[luminance({px[i], px[i + 1], px[i + 2]})];
  return hist;
}

TissueMask segment_tissue(const SlideImage &slide,
                          std::optional<int> threshold_override) {
  const RgbImage &img = slide.pixels;
  MILR_REQUIRE(!img.empty(), ErrorCode::InvalidArgument, "empty slide");
  TissueMask mask;
  mask.width = img.width();
  mask.height = img.height();
  if (threshold_override) {
    mask.threshold_used = *threshold_override;
  } else {
    const auto hist = luminance_histogram(img);
    mask.threshold_used = otsu_threshold(hist);
  }
  mask.bits.resize(static_cast<std::size_t>(mask.width) * mask.height);
  const auto px = img.bytes();
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    const std::uint8_t l = luminance({px[3 * i], px[3 * i + 1], px[3 * i + 2]});
    mask.bits[i] = l <= mask.threshold_used ? 1 : 0;
  }
  return mask;
}

std::vector<TileRecord> tile_slide(const SlideImage &slide,
                                   const TissueMask &mask, int tile_size,
                                   double min_tissue_frac) {
  MILR_REQUIRE(tile_size >= 1, ErrorCode::InvalidArgument,
               "tile_size must be >= 1");
  MILR_REQUIRE(mask.width == slide.width() && mask.height == slide.height(),
               ErrorCode::DimensionMismatch,
               "tissue mask does not match slide dimensions");
  const int nx = (slide.width() + tile_size - 1) / tile_size;
  const int ny = (slide.height() + tile_size - 1) / tile_size;
  std::vector<TileRecord> tiles;
  for (int gy = 0; gy < ny; ++gy) {
    for (int gx = 0; gx < nx; ++gx) {
      const int x0 = gx * tile_size, y0 = gy * tile_size;
      const int x1 = std::min(x0 + tile_size, slide.width());
      const int y1 = std::min(y0 + tile_size, slide.height());
      std::uint64_t tissue = 0;
      for (int y = y0; y < y1; ++y) {
        const std::uint8_t *row = &mask.bits[static_cast<std::size_t>(y) * mask.width];
        for (int x = x0; x < x1; ++x)
          tissue += row[x];
      }
      const double area = static_cast<double>(x1 - x0) * (y1 - y0);
      const double frac = static_cast<double>(tissue) / area;
      if (frac < min_tissue_frac)
        continue;
      TileRecord t;
      t.slide_id = slide.slide_id;
      t.grid_x = gx;
      t.grid_y = gy;
      t.origin_x = x0;
      t.origin_y = y0;
      t.tile_size = tile_size;
      t.tissue_fraction = frac;
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

RgbImage extract_tile(const RgbImage &slide, const TileRecord &tile) {
  RgbImage raw =
      slide.crop(tile.origin_x, tile.origin_y, tile.tile_size, tile.tile_size);
  if (tile.transform == Dihedral::Identity)
    return raw;
  return apply_dihedral(raw, tile.transform);
}

// ---------------------------------------------------------------------------

namespace {

const char *response_name(Response r) {
  return r == Response::Responder ? "R" : "NR";
}

const char *split_name(SplitTag s) {
  return s == SplitTag::Train ? "train" : "test";
}

} // namespace

CohortManifest parse_cohort_json(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedJson, std::string("cohort manifest: ") + e.what());
  }
  CohortManifest m;
  try {
    m.version = j.at("version").get<int>();
    MILR_REQUIRE(m.version == 1, ErrorCode::VersionMismatch,
                 "unsupported cohort manifest version " +
                     std::to_string(m.version));
    std::set<std::string> seen;
    for (const auto &p : j.at("patients")) {
      PatientEntry e;
      e.id = p.at("id").get<std::string>();
      const auto resp = p.at("response").get<std::string>();
      if (resp == "R")
        e.response = Response::Responder;
      else if (resp == "NR")
        e.response = Response::NonResponder;
      else
        fail(ErrorCode::MalformedJson,
             "patient " + e.id + ": response must be \"R\" or \"NR\"");
      e.slides = p.at("slides").get<std::vector<std::string>>();
      const auto split = p.value("split", std::string("train"));
      if (split == "train")
        e.split = SplitTag::Train;
      else if (split == "test")
        e.split = SplitTag::Test;
      else
        fail(ErrorCode::MalformedJson,
             "patient " + e.id + ": split must be \"train\" or \"test\"");
      if (!seen.insert(e.id).second)
        fail(ErrorCode::DuplicatePatient, "duplicate patient id " + e.id);
      m.patients.push_back(std::move(e));
    }
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedJson, std::string("cohort manifest: ") + e.what());
  }
  return m;
}

std::string cohort_to_json(const CohortManifest &manifest) {
  json patients = json::array();
  for (const auto &p : manifest.patients) {
    patients.push_back({{"id", p.id},
                        {"response", response_name(p.response)},
                        {"slides", p.slides},
                        {"split", split_name(p.split)}});
  }
  json j = {{"version", manifest.version}, {"patients", patients}};
  return j.dump(2) + "\n";
}

CohortManifest read_cohort(const std::filesystem::path &dir) {
  const auto path = dir / kCohortFile;
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  CohortManifest m = parse_cohort_json(ss.str());
  for (const auto &p : m.patients)
    for (const auto &s : p.slides)
      if (!std::filesystem::exists(dir / s))
        fail(ErrorCode::MissingSlide,
             "patient " + p.id + ": missing slide " + (dir / s).string());
  return m;
}

void write_cohort(const CohortManifest &manifest,
                  const std::filesystem::path &dir) {
  std::set<std::string> seen;
  for (const auto &p : manifest.patients)
    if (!seen.insert(p.id).second)
      fail(ErrorCode::DuplicatePatient, "duplicate patient id " + p.id);
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / kCohortFile, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + (dir / kCohortFile).string());
  out << cohort_to_json(manifest);
}

std::string slide_id_from_path(const std::string &relative_path) {
  return std::filesystem::path(relative_path).stem().string();
}

SlideImage load_slide(const std::filesystem::path &cohort_dir,
                      const std::string &relative_path) {
  const auto path = cohort_dir / relative_path;
  if (!std::filesystem::exists(path))
    fail(ErrorCode::MissingSlide, "missing slide " + path.string());
  return SlideImage{slide_id_from_path(relative_path), read_png_rgb(path)};
}

} // namespace milr
