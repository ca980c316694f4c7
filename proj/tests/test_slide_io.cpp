// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include <doctest.h>

#include <array>
#include <cstdint>

#include "rng.hpp"
#include "slide_io.hpp"
#include "test_util.hpp"

using namespace milr;
using milr::test::code_of;
using milr::test::TempDir;

namespace {

using Hist = std::array<std::uint64_t, 256>;

// Exhaustive scan in exact integer arithmetic. Maximizing
// w0 w1 (mu0 - mu1)^2 is the same as maximizing
// (N S0 - n0 S)^2 / (n0 n1), compared by cross-multiplication.
int otsu_oracle(const Hist &h) {
  using i128 = __int128;
  i128 n = 0, s = 0;
  for (int i = 0; i < 256; ++i) {
    n += h[i];
    s += static_cast<i128>(h[i]) * i;
  }
  int best = -1;
  i128 best_num = 0, best_den = 1;
  i128 n0 = 0, s0 = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += h[t];
    s0 += static_cast<i128>(h[t]) * t;
    const i128 n1 = n - n0;
    if (n0 == 0 || n1 == 0)
      continue;
    const i128 diff = n * s0 - n0 * s;
    const i128 num = diff * diff;
    const i128 den = n0 * n1;
    if (best < 0 || num * best_den > best_num * den) {
      best = t;
      best_num = num;
      best_den = den;
    }
  }
  return best;
}

SlideImage solid_slide(int w, int h, Rgb c) {
  return {"s", RgbImage(w, h, c)};
}

} // namespace

TEST_CASE("otsu two-level histogram picks the smallest maximizer") {
  Hist h{};
  h[10] = 500;
  h[200] = 500;
  CHECK(otsu_threshold(h) == 10);
}

TEST_CASE("otsu rejects degenerate histograms") {
  Hist h{};
  h[128] = 1000;
  CHECK(code_of([&] { otsu_threshold(h); }) == ErrorCode::DegenerateHistogram);
  Hist empty{};
  CHECK(code_of([&] { otsu_threshold(empty); }) == ErrorCode::DegenerateHistogram);
}

TEST_CASE("otsu matches the exhaustive oracle on random histograms") {
  Rng rng(2024);
  for (int trial = 0; trial < 200; ++trial) {
    Hist h{};
    // Alternate dense and sparse shapes; sparse ones produce plateaus.
    const int occupied = trial % 2 ? 2 + static_cast<int>(rng.below(6)) : 256;
    for (int k = 0; k < occupied; ++k) {
      const int level = occupied == 256 ? k : static_cast<int>(rng.below(256));
      h[level] += rng.below(1000);
    }
    int levels = 0;
    for (auto c : h)
      levels += c > 0;
    if (levels < 2)
      continue;
    CHECK(otsu_threshold(h) == otsu_oracle(h));
  }
}

TEST_CASE("luminance follows the weighted sum") {
  CHECK(luminance({255, 255, 255}) == 255);
  CHECK(luminance({0, 0, 0}) == 0);
  CHECK(luminance({100, 150, 200}) == 141); // 29.9 + 88.05 + 22.8 = 140.75
}

TEST_CASE("segmentation marks exactly the dark square") {
  SlideImage s = solid_slide(64, 48, {255, 255, 255});
  for (int y = 10; y < 20; ++y)
    for (int x = 30; x < 45; ++x)
      s.pixels.set(x, y, {0, 0, 0});
  const TissueMask m = segment_tissue(s);
  for (int y = 0; y < 48; ++y)
    for (int x = 0; x < 64; ++x)
      CHECK(m.at(x, y) == (x >= 30 && x < 45 && y >= 10 && y < 20));
  CHECK(m.threshold_used == 0);

  const TissueMask again = segment_tissue(s);
  CHECK(again.bits == m.bits);
  CHECK(again.threshold_used == m.threshold_used);
}

TEST_CASE("segmenting a blank slide fails") {
  const SlideImage s = solid_slide(32, 32, {255, 255, 255});
  CHECK(code_of([&] { segment_tissue(s); }) == ErrorCode::DegenerateHistogram);
}

TEST_CASE("tiling a fully tissue 1024 slide gives 16 full tiles") {
  const SlideImage s = solid_slide(1024, 1024, {90, 60, 40});
  const TissueMask m = segment_tissue(s, 200);
  const auto tiles = tile_slide(s, m, 256, 0.05);
  REQUIRE(tiles.size() == 16);
  for (std::size_t i = 0; i < tiles.size(); ++i) {
    CHECK(tiles[i].grid_x == static_cast<int>(i % 4));
    CHECK(tiles[i].grid_y == static_cast<int>(i / 4));
    CHECK(tiles[i].origin_x == tiles[i].grid_x * 256);
    CHECK(tiles[i].origin_y == tiles[i].grid_y * 256);
    CHECK(tiles[i].tissue_fraction == 1.0);
  }
}

TEST_CASE("edge tiles are padded with white and use the unpadded area") {
  SlideImage s = solid_slide(1000, 1000, {90, 60, 40});
  const TissueMask m = segment_tissue(s, 200);
  const auto tiles = tile_slide(s, m, 256, 0.0);
  REQUIRE(tiles.size() == 16);
  const TileRecord &corner = tiles.back();
  CHECK(corner.grid_x == 3);
  CHECK(corner.grid_y == 3);
  CHECK(corner.tissue_fraction == 1.0);
  const RgbImage raster = extract_tile(s.pixels, corner);
  CHECK(raster.width() == 256);
  CHECK(raster.at(231, 231) == Rgb{90, 60, 40});
  CHECK(raster.at(232, 0) == Rgb{255, 255, 255});
  CHECK(raster.at(0, 232) == Rgb{255, 255, 255});
}

TEST_CASE("tissue fraction filter and threshold override") {
  SlideImage s = solid_slide(128, 64, {250, 250, 250});
  // Left tile: 10% dark. Right tile: 2% dark.
  for (int i = 0; i < 410; ++i)
    s.pixels.set(i % 64, i / 64, {20, 20, 20});
  for (int i = 0; i < 82; ++i)
    s.pixels.set(64 + i % 64, i / 64, {120, 120, 120});
  const TissueMask m = segment_tissue(s, 150);
  const auto kept = tile_slide(s, m, 64, 0.05);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].grid_x == 0);
  CHECK(kept[0].tissue_fraction == doctest::Approx(410.0 / 4096));

  // Lowering the threshold never raises a tile's tissue fraction.
  double prev_left = 2.0, prev_right = 2.0;
  for (int t = 254; t >= 0; t -= 2) {
    const auto all = tile_slide(s, segment_tissue(s, t), 64, 0.0);
    REQUIRE(all.size() == 2);
    CHECK(all[0].tissue_fraction <= prev_left);
    CHECK(all[1].tissue_fraction <= prev_right);
    CHECK(all[0].tissue_fraction >= 0.0);
    CHECK(all[1].tissue_fraction <= 1.0);
    prev_left = all[0].tissue_fraction;
    prev_right = all[1].tissue_fraction;
  }
}

TEST_CASE("tiles reassemble the slide bit-exactly") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const int w = 40 + static_cast<int>(rng.below(300));
    const int h = 40 + static_cast<int>(rng.below(300));
    const int ts = 16 + static_cast<int>(rng.below(64));
    SlideImage s{"r", RgbImage(w, h)};
    for (auto &b : s.pixels.bytes())
      b = static_cast<std::uint8_t>(rng.below(256));
    const TissueMask m = segment_tissue(s);
    const auto tiles = tile_slide(s, m, ts, 0.0);
    const int gx = (w + ts - 1) / ts, gy = (h + ts - 1) / ts;
    REQUIRE(tiles.size() == static_cast<std::size_t>(gx * gy));
    RgbImage rebuilt(w, h, Rgb{0, 0, 0});
    std::size_t pixels = 0;
    for (const auto &t : tiles) {
      const RgbImage r = extract_tile(s.pixels, t);
      for (int y = 0; y < ts; ++y)
        for (int x = 0; x < ts; ++x) {
          const int sx = t.origin_x + x, sy = t.origin_y + y;
          if (sx < w && sy < h) {
            rebuilt.set(sx, sy, r.at(x, y));
            ++pixels;
          }
        }
    }
    CHECK(pixels == static_cast<std::size_t>(w) * h);
    CHECK(rebuilt == s.pixels);
  }
}

TEST_CASE("extract_tile applies the tile transform") {
  RgbImage img(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      img.set(x, y, {static_cast<std::uint8_t>(x), static_cast<std::uint8_t>(y), 0});
  TileRecord t;
  t.tile_size = 4;
  t.transform = Dihedral::Rot90;
  const RgbImage r = extract_tile(img, t);
  // Clockwise rotation: the left column becomes the top row.
  CHECK(r.at(0, 0) == Rgb{0, 3, 0});
  CHECK(r.at(3, 0) == Rgb{0, 0, 0});
  CHECK(r == apply_dihedral(img, Dihedral::Rot90));
  for (auto d : kDihedralOrder) {
    const RgbImage a = apply_dihedral(img, d);
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) {
        const auto src = dihedral_source(d, x, y, 4);
        CHECK(a.at(x, y) == img.at(src[0], src[1]));
      }
  }
}

TEST_CASE("cohort manifest round trip and errors") {
  TempDir dir;
  std::filesystem::create_directories(dir / "slides");
  write_png_rgb(dir / "slides/a.png", RgbImage(8, 8, Rgb{10, 10, 10}));
  write_png_rgb(dir / "slides/b.png", RgbImage(8, 8, Rgb{10, 10, 10}));
  CohortManifest m;
  m.patients.push_back({"P1", Response::Responder, {"slides/a.png"}, SplitTag::Train});
  m.patients.push_back({"P2", Response::NonResponder, {"slides/b.png"}, SplitTag::Test});
  write_cohort(m, dir.path());
  CHECK(read_cohort(dir.path()) == m);
  CHECK(slide_id_from_path("slides/a.png") == "a");
  CHECK(load_slide(dir.path(), "slides/a.png").slide_id == "a");

  CohortManifest missing = m;
  missing.patients[1].slides = {"slides/zzz.png"};
  write_cohort(missing, dir.path());
  try {
    read_cohort(dir.path());
    FAIL("expected MissingSlide");
  } catch (const Error &e) {
    CHECK(e.code() == ErrorCode::MissingSlide);
    CHECK(std::string(e.what()).find("slides/zzz.png") != std::string::npos);
  }

  const std::string dup =
      R"({"version":1,"patients":[{"id":"P1","response":"R","slides":[],"split":"train"},)"
      R"({"id":"P1","response":"NR","slides":[],"split":"train"}]})";
  CHECK(code_of([&] { parse_cohort_json(dup); }) == ErrorCode::DuplicatePatient);
  CHECK(code_of([&] { parse_cohort_json("{not json"); }) == ErrorCode::MalformedJson);
  CHECK(code_of([&] {
          parse_cohort_json(R"({"version":1,"patients":[{"id":"P","response":"X","slides":[],"split":"train"}]})");
        }) == ErrorCode::MalformedJson);
}
