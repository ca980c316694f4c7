// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/normal.hpp>
#include <json.hpp>

#include "error.hpp"
#include "rng.hpp"
#include "stain.hpp"

namespace milr {

using nlohmann::json;

const char *pattern_link_name(PatternLink p) {
  switch (p) {
  case PatternLink::ReactiveVsConstitutive: return "reactive_vs_constitutive";
  case PatternLink::TpsOnly: return "tps_only";
  case PatternLink::None: return "none";
  }
  return "?";
}

PatternLink parse_pattern_link(const std::string &s) {
  if (s == "reactive_vs_constitutive")
    return PatternLink::ReactiveVsConstitutive;
  if (s == "tps_only")
    return PatternLink::TpsOnly;
  if (s == "none")
    return PatternLink::None;
  fail(ErrorCode::InvalidArgument, "unknown pattern_link '" + s + "'");
}

const char *stain_pattern_name(StainPattern p) {
  return p == StainPattern::Reactive ? "reactive" : "constitutive";
}

StainPattern parse_stain_pattern(const std::string &s) {
  if (s == "reactive")
    return StainPattern::Reactive;
  if (s == "constitutive")
    return StainPattern::Constitutive;
  fail(ErrorCode::InvalidArgument, "unknown stain pattern '" + s + "'");
}

int responder_count(int n, double fraction) {
  return static_cast<int>(std::floor(n * fraction + 0.5));
}

void validate(const SynthConfig &cfg) {
  MILR_REQUIRE(cfg.n_patients >= 2, ErrorCode::ConfigInconsistent,
               "n_patients must be >= 2");
  MILR_REQUIRE(cfg.n_test >= 0, ErrorCode::ConfigInconsistent,
               "n_test must be >= 0");
  MILR_REQUIRE(cfg.responder_fraction >= 0.0 && cfg.responder_fraction <= 1.0,
               ErrorCode::ConfigInconsistent,
               "responder_fraction must lie in [0,1]");
  const int r = responder_count(cfg.n_patients, cfg.responder_fraction);
  MILR_REQUIRE(r >= 1, ErrorCode::ConfigInconsistent,
               "responder_fraction yields no responders");
  MILR_REQUIRE(r < cfg.n_patients, ErrorCode::ConfigInconsistent,
               "responder_fraction yields no non-responders");
  MILR_REQUIRE(cfg.tile_size >= 8, ErrorCode::ConfigInconsistent,
               "tile_size must be >= 8");
  MILR_REQUIRE(cfg.slide_size >= 4 * cfg.tile_size,
               ErrorCode::ConfigInconsistent,
               "slide_size must be at least 4 * tile_size");
  MILR_REQUIRE(cfg.tps_sd >= 0.0, ErrorCode::ConfigInconsistent,
               "tps_sd must be >= 0");
  MILR_REQUIRE(cfg.tiles_per_patient_range[0] >= 1 &&
                   cfg.tiles_per_patient_range[0] <=
                       cfg.tiles_per_patient_range[1],
               ErrorCode::ConfigInconsistent,
               "tiles_per_patient_range must be [min,max] with 1 <= min <= max");
  MILR_REQUIRE(cfg.tumor_tile_threshold > 0.0 && cfg.tumor_tile_threshold <= 1.0,
               ErrorCode::ConfigInconsistent,
               "tumor_tile_threshold must lie in (0,1]");
  MILR_REQUIRE(cfg.nucleus_radius >= 1 &&
                   cfg.tumor_cell_spacing >= 2 * cfg.nucleus_radius + 4 &&
                   cfg.stroma_cell_spacing >= 2 * cfg.nucleus_radius + 4,
               ErrorCode::ConfigInconsistent,
               "cell spacing too small for the nucleus radius");
}

int GroundTruth::tumor_cells() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(),
                                        [](const CellRecord &c) { return c.is_tumor; }));
}

int GroundTruth::positive_tumor_cells() const {
  return static_cast<int>(std::count_if(
      cells.begin(), cells.end(),
      [](const CellRecord &c) { return c.is_tumor && c.is_positive; }));
}

std::vector<TileTruth> label_tiles(const GrayImage &tissue,
                                   const GrayImage &tumor, int tile_size,
                                   double threshold) {
  MILR_REQUIRE(tissue.width == tumor.width && tissue.height == tumor.height,
               ErrorCode::DimensionMismatch, "mask dimensions differ");
  const int nx = (tissue.width + tile_size - 1) / tile_size;
  const int ny = (tissue.height + tile_size - 1) / tile_size;
  std::vector<TileTruth> out;
  for (int gy = 0; gy < ny; ++gy)
    for (int gx = 0; gx < nx; ++gx) {
      long tissue_px = 0, tumor_px = 0;
      for (int y = gy * tile_size; y < std::min(tissue.height, (gy + 1) * tile_size); ++y)
        for (int x = gx * tile_size; x < std::min(tissue.width, (gx + 1) * tile_size); ++x) {
          if (tissue.at(x, y)) {
            ++tissue_px;
            tumor_px += tumor.at(x, y) != 0;
          }
        }
      TileTruth t;
      t.grid_x = gx;
      t.grid_y = gy;
      t.tumor_fraction =
          tissue_px > 0 ? static_cast<double>(tumor_px) / tissue_px : 0.0;
      t.is_tumor_tile = tissue_px > 0 && t.tumor_fraction >= threshold;
      out.push_back(t);
    }
  return out;
}

namespace {

// Stratified draw: each class's quantiles are spread over (0,1) so the two
// classes share one distribution without sampling drift between them.
std::vector<double> stratified_tps(std::size_t n, double mean, double sd,
                                   Rng &rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  boost::math::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double q = (static_cast<double>(perm[i]) + rng.uniform()) / n;
    q = std::clamp(q, 1e-12, 1.0 - 1e-12);
    const double v = mean + sd * boost::math::quantile(normal, q);
    out[i] = std::clamp(v, 0.05, 0.99);
  }
  return out;
}

} // namespace

std::vector<PatientSpec> plan_cohort(const SynthConfig &cfg) {
  validate(cfg);
  const int total = cfg.n_patients + cfg.n_test;
  std::vector<PatientSpec> specs(total);

  auto assign = [&](int begin, int count, int responders, std::uint64_t stream) {
    std::vector<int> order(count);
    std::iota(order.begin(), order.end(), begin);
    Rng rng(derive_seed(cfg.seed, stream));
    rng.shuffle(order);
    for (int i = 0; i < count; ++i)
      specs[order[i]].responder = i < responders;
  };
  assign(0, cfg.n_patients, responder_count(cfg.n_patients, cfg.responder_fraction), 1);
  if (cfg.n_test > 0)
    assign(cfg.n_patients, cfg.n_test,
           responder_count(cfg.n_test, cfg.responder_fraction), 2);

  char buf[32];
  for (int i = 0; i < total; ++i) {
    PatientSpec &s = specs[i];
    std::snprintf(buf, sizeof buf, "P%03d", i);
    s.patient_id = buf;
    s.slide_id = buf;
    s.split = i < cfg.n_patients ? SplitTag::Train : SplitTag::Test;
    s.seed = derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(i));
    Rng rng(derive_seed(s.seed, 1));
    const int lo = cfg.tiles_per_patient_range[0];
    const int hi = cfg.tiles_per_patient_range[1];
    s.target_tissue_tiles = lo + static_cast<int>(rng.below(hi - lo + 1));
    switch (cfg.pattern_link) {
    case PatternLink::ReactiveVsConstitutive:
      s.pattern = s.responder ? StainPattern::Reactive : StainPattern::Constitutive;
      break;
    case PatternLink::TpsOnly:
    case PatternLink::None:
      s.pattern = rng.uniform() < 0.5 ? StainPattern::Reactive
                                      : StainPattern::Constitutive;
      break;
    }
  }

  for (int cls = 0; cls < 2; ++cls) {
    std::vector<int> members;
    for (int i = 0; i < total; ++i)
      if (specs[i].responder == (cls == 1))
        members.push_back(i);
    double mean = cfg.tps_mean;
    if (cls == 1 && cfg.pattern_link == PatternLink::TpsOnly)
      mean += 0.2;
    Rng rng(derive_seed(cfg.seed, 10 + static_cast<std::uint64_t>(cls)));
    const auto tps = stratified_tps(members.size(), mean, cfg.tps_sd, rng);
    for (std::size_t k = 0; k < members.size(); ++k)
      specs[members[k]].target_tps = tps[k];
  }
  return specs;
}

// ---------------------------------------------------------------------------

std::vector<double> squared_distance_to_boundary(const GrayImage &mask) {
  const int w = mask.width + 2, h = mask.height + 2;
  constexpr double inf = 1e12;
  std::vector<double> grid(static_cast<std::size_t>(w) * h, 0.0);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      grid[static_cast<std::size_t>(y + 1) * w + x + 1] = mask.at(x, y) ? inf : 0.0;

  // Felzenszwalb-Huttenlocher 1-D lower envelope pass. The padded border
  // guarantees every row and column holds a zero, so `inf` never survives.
  auto pass = [](std::vector<double> &f) {
    const int n = static_cast<int>(f.size());
    std::vector<double> d(n), z(n + 1);
    std::vector<int> v(n);
    int k = 0;
    v[0] = 0;
    z[0] = -1e300;
    z[1] = 1e300;
    auto cross = [&](int q, int p) {
      return ((f[q] + double(q) * q) - (f[p] + double(p) * p)) /
             (2.0 * q - 2.0 * p);
    };
    for (int q = 1; q < n; ++q) {
      double s = cross(q, v[k]);
      while (s <= z[k]) {
        --k;
        s = cross(q, v[k]);
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = 1e300;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
      while (z[k + 1] < q)
        ++k;
      d[q] = double(q - v[k]) * (q - v[k]) + f[v[k]];
    }
    f = std::move(d);
  };

  std::vector<double> line;
  for (int x = 0; x < w; ++x) {
    line.resize(h);
    for (int y = 0; y < h; ++y)
      line[y] = grid[static_cast<std::size_t>(y) * w + x];
    pass(line);
    for (int y = 0; y < h; ++y)
      grid[static_cast<std::size_t>(y) * w + x] = line[y];
  }
  for (int y = 0; y < h; ++y) {
    line.assign(grid.begin() + static_cast<std::ptrdiff_t>(y) * w,
                grid.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
    pass(line);
    std::copy(line.begin(), line.end(),
              grid.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }
  std::vector<double> out(static_cast<std::size_t>(mask.width) * mask.height);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      out[static_cast<std::size_t>(y) * mask.width + x] =
          grid[static_cast<std::size_t>(y + 1) * w + x + 1];
  return out;
}

namespace {

struct Ellipse {
  double cx, cy, a, b, angle;
  bool contains(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = c * dx + s * dy, v = -s * dx + c * dy;
    return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
  }
};

struct Geometry {
  std::vector<Ellipse> tissue;
  std::vector<Ellipse> nests;
  GrayImage tissue_mask;
  GrayImage tumor_mask;
};

Geometry make_geometry(const PatientSpec &spec, const SynthConfig &cfg,
                       Rng &rng) {
  const double size = cfg.slide_size;
  Geometry g;
  const int k = 2 + static_cast<int>(rng.below(4));
  const double area = spec.target_tissue_tiles * double(cfg.tile_size) *
                      cfg.tile_size * 0.75;
  std::vector<double> share(k);
  for (auto &s : share)
    s = rng.uniform(0.5, 1.5);
  const double total = std::accumulate(share.begin(), share.end(), 0.0);
  for (int i = 0; i < k; ++i) {
    const double ai = area * share[i] / total;
    const double aspect = rng.uniform(0.55, 1.0);
    double major = std::sqrt(ai / (3.141592653589793 * aspect));
    major = std::min(major, 0.45 * size);
    const double minor = aspect * major;
    const double angle = rng.uniform(0.0, 3.141592653589793);
    const double margin = major + 8.0;
    const double cx = margin < size - margin ? rng.uniform(margin, size - margin)
                                             : size / 2;
    const double cy = margin < size - margin ? rng.uniform(margin, size - margin)
                                             : size / 2;
    Ellipse e{cx, cy, major, minor, angle};
    g.tissue.push_back(e);

    const int nests = 1 + (rng.uniform() < 0.3 ? 1 : 0);
    for (int j = 0; j < nests; ++j) {
      const double scale = rng.uniform(0.45, 0.75);
      const double na = major * scale, nb = minor * rng.uniform(0.85, 1.0) * scale;
      const double u = rng.uniform(-1.0, 1.0) * (major - na) * 0.6;
      const double v = rng.uniform(-1.0, 1.0) * (minor - nb) * 0.6;
      const double c = std::cos(angle), s = std::sin(angle);
      g.nests.push_back({cx + c * u - s * v, cy + s * u + c * v, na, nb,
                         angle + rng.uniform(-0.3, 0.3)});
    }
  }
  const int n = cfg.slide_size;
  g.tissue_mask = GrayImage{n, n, std::vector<std::uint8_t>(std::size_t(n) * n, 0)};
  g.tumor_mask = g.tissue_mask;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool in_tissue = false;
      for (const auto &e : g.tissue)
        if (e.contains(px, py)) {
          in_tissue = true;
          break;
        }
      if (!in_tissue)
        continue;
      g.tissue_mask.data[std::size_t(y) * n + x] = 255;
      for (const auto &e : g.nests)
        if (e.contains(px, py)) {
          g.tumor_mask.data[std::size_t(y) * n + x] = 255;
          break;
        }
    }
  return g;
}

// Concentrations of (hematoxylin, DAB, eosin-like counterstain) per class
// of pixel; rendered through the stain vectors below.
struct Tint {
  double h, dab, eosin;
};
constexpr Tint kStroma{0.05, 0.0, 0.18};
constexpr Tint kTumorBackground{0.10, 0.0, 0.28};
constexpr Tint kNegativeNucleus{0.70, 0.0, 0.15};
constexpr Tint kPositiveNucleus{0.12, 0.55, 0.15};

} // namespace

std::pair<SlideImage, GroundTruth> generate_slide(const PatientSpec &spec,
                                                  const SynthConfig &cfg) {
  const int n = cfg.slide_size;
  const int r = cfg.nucleus_radius;
  Rng rng(derive_seed(spec.seed, 2));

  Geometry geo;
  std::vector<CellRecord> tumor_cells;
  for (int attempt = 0;; ++attempt) {
    geo = make_geometry(spec, cfg, rng);
    tumor_cells.clear();
    const int s = cfg.tumor_cell_spacing;
    const int ox = static_cast<int>(rng.below(s)), oy = static_cast<int>(rng.below(s));
    for (int y = oy; y < n; y += s)
      for (int x = ox; x < n; x += s) {
        const int cx = x + static_cast<int>(rng.below(3)) - 1;
        const int cy = y + static_cast<int>(rng.below(3)) - 1;
        bool ok = cx - r >= 0 && cy - r >= 0 && cx + r < n && cy + r < n;
        for (int dy = -r; ok && dy <= r; ++dy)
          for (int dx = -r; ok && dx <= r; ++dx)
            if (dx * dx + dy * dy <= r * r && !geo.tumor_mask.at(cx + dx, cy + dy))
              ok = false;
        if (ok)
          tumor_cells.push_back({cx, cy, true, false});
      }
    bool has_tumor_tile = false;
    for (const auto &t : label_tiles(geo.tissue_mask, geo.tumor_mask, cfg.tile_size,
                                     cfg.tumor_tile_threshold))
      has_tumor_tile = has_tumor_tile || t.is_tumor_tile;
    if ((tumor_cells.size() >= 20 && has_tumor_tile) || attempt >= 20)
      break;
  }
  MILR_REQUIRE(!tumor_cells.empty(), ErrorCode::ConfigInconsistent,
               "slide " + spec.slide_id + ": no room for tumor cells");

  // Positive cells.
  const int n_tumor = static_cast<int>(tumor_cells.size());
  const int n_pos = std::clamp(
      static_cast<int>(std::floor(spec.target_tps * n_tumor + 0.5)), 0, n_tumor);
  std::vector<int> order(n_tumor);
  std::iota(order.begin(), order.end(), 0);
  if (spec.pattern == StainPattern::Reactive) {
    const auto dist2 = squared_distance_to_boundary(geo.tumor_mask);
    std::vector<double> key(n_tumor);
    for (int i = 0; i < n_tumor; ++i)
      key[i] = std::sqrt(dist2[std::size_t(tumor_cells[i].y) * n + tumor_cells[i].x]) +
               rng.uniform(0.0, 1.5);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return key[a] < key[b]; });
  } else {
    rng.shuffle(order);
  }
  for (int i = 0; i < n_pos; ++i)
    tumor_cells[order[i]].is_positive = true;

  // Stromal cells: well clear of the tumor mask, never positive.
  std::vector<CellRecord> cells = tumor_cells;
  {
    const int s = cfg.stroma_cell_spacing;
    const int ox = static_cast<int>(rng.below(s)), oy = static_cast<int>(rng.below(s));
    const int margin = r + 2;
    for (int y = oy; y < n; y += s)
      for (int x = ox; x < n; x += s) {
        const int cx = x + static_cast<int>(rng.below(7)) - 3;
        const int cy = y + static_cast<int>(rng.below(7)) - 3;
        bool ok = cx - margin >= 0 && cy - margin >= 0 && cx + margin < n &&
                  cy + margin < n;
        for (int dy = -margin; ok && dy <= margin; ++dy)
          for (int dx = -margin; ok && dx <= margin; ++dx) {
            if (geo.tumor_mask.at(cx + dx, cy + dy))
              ok = false;
            else if (dx * dx + dy * dy <= r * r && !geo.tissue_mask.at(cx + dx, cy + dy))
              ok = false;
          }
        if (ok)
          cells.push_back({cx, cy, false, false});
      }
  }

  // Render.
  const StainVectors sv = StainVectors::hdab_default();
  const Eigen::Vector3d eosin = Eigen::Vector3d(0.072, 0.990, 0.105).normalized();
  auto tint_od = [&](const Tint &t) -> Eigen::Vector3d {
    return t.h * sv.hematoxylin + t.dab * sv.dab + t.eosin * eosin;
  };
  const Rgb stroma = od_to_rgb(tint_od(kStroma));
  const Rgb tumor_bg = od_to_rgb(tint_od(kTumorBackground));
  const Rgb neg = od_to_rgb(tint_od(kNegativeNucleus));
  const Rgb pos = od_to_rgb(tint_od(kPositiveNucleus));

  auto jitter = [&](Rgb c, int amp) {
    auto ch = [&](std::uint8_t v) {
      const int d = static_cast<int>(rng.below(2 * amp + 1)) - amp;
      return static_cast<std::uint8_t>(std::clamp(int(v) + d, 0, 255));
    };
    const auto r_ = ch(c.r);
    const auto g_ = ch(c.g);
    const auto b_ = ch(c.b);
    return Rgb{r_, g_, b_};
  };

  RgbImage img(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (!geo.tissue_mask.at(x, y))
        img.set(x, y, jitter({240, 240, 240}, 5));
      else
        img.set(x, y, jitter(geo.tumor_mask.at(x, y) ? tumor_bg : stroma, 3));
    }
  for (const auto &c : cells)
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        if (dx * dx + dy * dy <= r * r)
          img.set(c.x + dx, c.y + dy, jitter(c.is_positive ? pos : neg, 3));

  GroundTruth gt;
  gt.slide_id = spec.slide_id;
  gt.patient_id = spec.patient_id;
  gt.pattern = spec.pattern;
  gt.true_tps = static_cast<double>(n_pos) / n_tumor;
  gt.tile_size = cfg.tile_size;
  gt.tumor_tile_threshold = cfg.tumor_tile_threshold;
  gt.cells = std::move(cells);
  gt.tiles = label_tiles(geo.tissue_mask, geo.tumor_mask, cfg.tile_size,
                         cfg.tumor_tile_threshold);
  gt.tumor_mask = std::move(geo.tumor_mask);
  gt.tissue_mask = std::move(geo.tissue_mask);
  return {SlideImage{spec.slide_id, std::move(img)}, std::move(gt)};
}

namespace {

CohortManifest manifest_for(const std::vector<PatientSpec> &specs) {
  CohortManifest m;
  for (const auto &s : specs)
    m.patients.push_back({s.patient_id,
                          s.responder ? Response::Responder : Response::NonResponder,
                          {"slides/" + s.slide_id + ".png"},
                          s.split});
  return m;
}

} // namespace

SynthCohort generate_cohort(const SynthConfig &cfg) {
  SynthCohort out;
  out.specs = plan_cohort(cfg);
  out.manifest = manifest_for(out.specs);
  for (const auto &s : out.specs) {
    auto [slide, gt] = generate_slide(s, cfg);
    out.slides.push_back(std::move(slide));
    out.truth.push_back(std::move(gt));
  }
  return out;
}

CohortManifest write_synth_cohort(const SynthConfig &cfg,
                                  const std::filesystem::path &dir) {
  const auto specs = plan_cohort(cfg);
  const auto slide_dir = dir / "slides";
  std::filesystem::create_directories(slide_dir);
  for (const auto &s : specs) {
    auto [slide, gt] = generate_slide(s, cfg);
    write_png_rgb(slide_dir / (s.slide_id + ".png"), slide.pixels);
    write_truth(gt, slide_dir);
  }
  CohortManifest m = manifest_for(specs);
  write_cohort(m, dir);
  return m;
}

std::string truth_to_json(const GroundTruth &gt) {
  json cells = json::array();
  for (const auto &c : gt.cells)
    cells.push_back({{"x", c.x}, {"y", c.y}, {"tumor", c.is_tumor},
                     {"positive", c.is_positive}});
  json tiles = json::array();
  for (const auto &t : gt.tiles)
    tiles.push_back({{"grid_x", t.grid_x},
                     {"grid_y", t.grid_y},
                     {"tumor_fraction", t.tumor_fraction},
                     {"is_tumor_tile", t.is_tumor_tile}});
  json j = {{"version", 1},
            {"slide_id", gt.slide_id},
            {"patient_id", gt.patient_id},
            {"pattern", stain_pattern_name(gt.pattern)},
            {"true_tps", gt.true_tps},
            {"tile_size", gt.tile_size},
            {"tumor_tile_threshold", gt.tumor_tile_threshold},
            {"cells", cells},
            {"tiles", tiles}};
  return j.dump() + "\n";
}

void write_truth(const GroundTruth &gt, const std::filesystem::path &slide_dir) {
  std::ofstream out(slide_dir / (gt.slide_id + ".truth.json"), std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write truth sidecar for " + gt.slide_id);
  out << truth_to_json(gt);
  write_png_gray(slide_dir / (gt.slide_id + ".tumor.png"), gt.tumor_mask);
  write_png_gray(slide_dir / (gt.slide_id + ".tissue.png"), gt.tissue_mask);
}

GroundTruth read_truth(const std::filesystem::path &slide_dir,
                       const std::string &slide_id, bool with_masks) {
  const auto path = slide_dir / (slide_id + ".truth.json");
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::Io, "cannot read " + path.string());
  GroundTruth gt;
  try {
    const json j = json::parse(in);
    gt.slide_id = j.at("slide_id").get<std::string>();
    gt.patient_id = j.at("patient_id").get<std::string>();
    gt.pattern = parse_stain_pattern(j.at("pattern").get<std::string>());
    gt.true_tps = j.at("true_tps").get<double>();
    gt.tile_size = j.at("tile_size").get<int>();
    gt.tumor_tile_threshold = j.at("tumor_tile_threshold").get<double>();
    for (const auto &c : j.at("cells"))
      gt.cells.push_back({c.at("x").get<int>(), c.at("y").get<int>(),
                          c.at("tumor").get<bool>(), c.at("positive").get<bool>()});
    for (const auto &t : j.at("tiles"))
      gt.tiles.push_back({t.at("grid_x").get<int>(), t.at("grid_y").get<int>(),
                          t.at("tumor_fraction").get<double>(),
                          t.at("is_tumor_tile").get<bool>()});
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedJson, path.string() + ": " + e.what());
  }
  if (with_masks) {
    gt.tumor_mask = read_png_gray(slide_dir / (slide_id + ".tumor.png"));
    const auto tissue = slide_dir / (slide_id + ".tissue.png");
    if (std::filesystem::exists(tissue))
      gt.tissue_mask = read_png_gray(tissue);
  }
  return gt;
}

} // namespace milr
