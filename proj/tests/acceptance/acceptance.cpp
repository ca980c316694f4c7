// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

// Acceptance runner. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails. Arguments select criteria by number; the work
// directory for generated cohorts comes from --work (default: a temp dir).

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cohort.hpp"
#include "config.hpp"
#include "cv.hpp"
#include "error.hpp"
#include "image.hpp"
#include "metrics.hpp"
#include "mil.hpp"
#include "pipeline.hpp"
#include "rng.hpp"
#include "slide_io.hpp"
#include "synth.hpp"
#include "tps.hpp"
#include "workflow.hpp"

#include "../metric_oracles.hpp"
#include "../mil_oracles.hpp"

namespace fs = std::filesystem;
using namespace milr;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

fs::path g_work;

// Widths used for the cohort-scale criteria; see the README.
constexpr MilDims kCohortDims{kHandcraftedDim, 64, 64, 32, false};
constexpr int kCohortEpochs = 20;

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0;
  std::string worst_block;
  for (int bag = 0; bag < 20; ++bag) {
    const MilDims dims{27, 32, 24, 16, bag % 2 == 1};
    const MilParams p = test::random_params(dims, rng);
    const int k = 1 + static_cast<int>(rng.below(8));
    const Eigen::MatrixXd x = test::random_instances(k, 27, rng);
    const int y = static_cast<int>(rng.below(2));
    for (const auto &[name, err] : test::gradient_errors(x, p, y, rng.uniform(0.5, 4.0)))
      if (err > worst) {
        worst = err;
        worst_block = name;
      }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0, "max block rel err " + sci(worst) + " (" + worst_block + "), " + fmt(secs, 1) + " s"};
}

Outcome mil_invariants() {
  Rng rng(202);
  double sum_err = 0.0, min_a = 1.0, perm_err = 0.0;
  for (int bag = 0; bag < 1000; ++bag) {
    const MilDims dims{27, 32, 24, 16, bag % 2 == 1};
    const MilParams p = test::random_params(dims, rng);
    const int k = 1 + static_cast<int>(rng.below(32));
    const Eigen::MatrixXd x = test::random_instances(k, 27, rng);
    const auto r = forward(x, p);
    sum_err = std::max(sum_err, std::abs(r.attention.sum() - 1.0));
    min_a = std::min(min_a, r.attention.minCoeff());
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Eigen::MatrixXd xp(k, 27);
    for (int i = 0; i < k; ++i)
      xp.row(i) = x.row(perm[i]);
    perm_err = std::max(perm_err, std::abs(forward(xp, p).p - r.p));
  }
  return {sum_err <= 1e-12 && min_a >= 0.0 && perm_err < 1e-12,
          "max |sum a - 1| " + sci(sum_err) + ", min a " + sci(min_a) + ", max |dp| " +
              sci(perm_err)};
}

using Hist = std::array<std::uint64_t, 256>;

// Exhaustive between-class variance scan in exact integer arithmetic.
int otsu_oracle(const Hist &h) {
  using i128 = __int128;
  i128 n = 0, s = 0;
  for (int i = 0; i < 256; ++i) {
    n += h[i];
    s += static_cast<i128>(h[i]) * i;
  }
  int best = -1;
  i128 best_num = 0, best_den = 1, n0 = 0, s0 = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += h[t];
    s0 += static_cast<i128>(h[t]) * t;
    const i128 n1 = n - n0;
    if (n0 == 0 || n1 == 0)
      continue;
    const i128 diff = n * s0 - n0 * s;
    if (best < 0 || diff * diff * best_den > best_num * (n0 * n1)) {
      best = t;
      best_num = diff * diff;
      best_den = n0 * n1;
    }
  }
  return best;
}

Outcome otsu_agreement() {
  Rng rng(303);
  int agree = 0, trials = 0;
  while (trials < 100) {
    Hist h{};
    const int occupied = trials % 2 ? 2 + static_cast<int>(rng.below(6)) : 256;
    for (int k = 0; k < occupied; ++k)
      h[occupied == 256 ? k : rng.below(256)] += rng.below(1000);
    if (std::count_if(h.begin(), h.end(), [](auto c) { return c > 0; }) < 2)
      continue;
    ++trials;
    agree += otsu_threshold(h) == otsu_oracle(h);
  }
  Hist two{};
  two[10] = 5;
  two[200] = 5;
  const bool two_level = otsu_threshold(two) == 10 && otsu_oracle(two) == 10;
  bool degenerate = false;
  try {
    Hist one{};
    one[128] = 1000;
    otsu_threshold(one);
  } catch (const Error &e) {
    degenerate = e.code() == ErrorCode::DegenerateHistogram;
  }
  return {agree == 100 && two_level && degenerate,
          std::to_string(agree) + "/100 random, two-level " + (two_level ? "ok" : "bad") +
              ", degenerate " + (degenerate ? "ok" : "bad")};
}

Outcome tiling_partition() {
  Rng rng(404);
  int ok = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const int w = 50 + static_cast<int>(rng.below(900));
    const int h = 50 + static_cast<int>(rng.below(900));
    const int ts = 32 + static_cast<int>(rng.below(200));
    SlideImage s{"r", RgbImage(w, h)};
    for (auto &b : s.pixels.bytes())
      b = static_cast<std::uint8_t>(rng.below(256));
    const auto tiles = tile_slide(s, segment_tissue(s), ts, 0.0);
    const std::size_t expected =
        static_cast<std::size_t>((w + ts - 1) / ts) * static_cast<std::size_t>((h + ts - 1) / ts);
    RgbImage rebuilt(w, h, Rgb{0, 0, 0});
    std::vector<std::uint8_t> hits(static_cast<std::size_t>(w) * h, 0);
    for (const auto &t : tiles) {
      const RgbImage r = extract_tile(s.pixels, t);
      for (int y = 0; y < ts; ++y)
        for (int x = 0; x < ts; ++x) {
          const int sx = t.origin_x + x, sy = t.origin_y + y;
          if (sx < w && sy < h) {
            rebuilt.set(sx, sy, r.at(x, y));
            ++hits[static_cast<std::size_t>(sy) * w + sx];
          }
        }
    }
    const bool once = std::all_of(hits.begin(), hits.end(), [](auto c) { return c == 1; });
    ok += tiles.size() == expected && once && rebuilt == s.pixels;
  }
  return {ok == 10, std::to_string(ok) + "/10 slide sizes partition exactly"};
}

// ---------------------------------------------------------------------------
// Cohort-scale criteria share one generated cohort.

RunConfig cohort_config() {
  RunConfig c;
  c.paths.cohort = (g_work / "cohort").string();
  c.paths.labels = "truth";
  c.synth.n_patients = 46;
  c.synth.n_test = 20;
  c.synth.slide_size = 1024;
  c.synth.tile_size = 128;
  c.tiling.tile_size = 128;
  c.features.patch_size = 32;
  for (TrainConfig *t : {&c.train_tumor, &c.train_responder}) {
    t->dims = kCohortDims;
    t->epochs = kCohortEpochs;
  }
  c.eval.folds = 10;
  c.eval.repeats = 3;
  c.resolve();
  return c;
}

Outcome tumor_recognition() {
  const auto t0 = Clock::now();
  const RunConfig cfg = cohort_config();
  cmd_synth_generate(cfg);
  cmd_tile(cfg);
  cmd_features_extract(cfg);
  const auto summary = cmd_train_tumor(cfg);
  const double secs = seconds_since(t0);
  if (!summary.contains("held_out"))
    return {false, "held-out set has a single tile class"};
  const double roc = summary["held_out"]["roc_auc"];
  const double pr = summary["held_out"]["pr_auc"];
  return {roc >= 0.95 && pr >= 0.95 && secs < 600.0,
          "tile ROC " + fmt(roc) + ", PR " + fmt(pr) + " on " +
              std::to_string(summary["held_out"]["tiles"].get<std::size_t>()) +
              " held-out tiles, " + fmt(secs, 0) + " s"};
}

Outcome two_step_vs_tps() {
  const RunConfig cfg = cohort_config();
  if (!fs::exists(fs::path(cfg.paths.cohort) / "features.milf"))
    cmd_features_extract(cfg);
  const auto t0 = Clock::now();
  const auto table = cmd_ablation(cfg);
  const double secs = seconds_since(t0);
  std::map<std::string, double> auc;
  for (const auto &row : table["rows"])
    auc[row["method"].get<std::string>()] = row["roc_auc"]["mean"];
  const double aug = auc["two_step_augmented"], plain = auc["two_step"], tps = auc["tps"];
  return {aug >= 0.85 && tps <= 0.65 && plain <= aug + 0.02 && secs < 1800.0,
          "two-step+aug " + fmt(aug) + ", two-step " + fmt(plain) + ", single-step " +
              fmt(auc["single_step"]) + ", TPS " + fmt(tps) + ", " + fmt(secs, 0) + " s"};
}

// ---------------------------------------------------------------------------

Outcome cv_pooling() {
  std::vector<int> labels(46, 0);
  for (int i = 0; i < 10; ++i)
    labels[i * 4] = 1;
  std::vector<std::string> ids;
  for (int i = 0; i < 46; ++i)
    ids.push_back("P" + std::to_string(i));
  const FoldScorer noisy = [&](const std::vector<std::size_t> &,
                               const std::vector<std::size_t> &test, int repeat, int fold, int &) {
    std::vector<double> out;
    for (std::size_t i : test) {
      Rng r(derive_seed(derive_seed(repeat, fold), i));
      out.push_back(0.4 * labels[i] + r.uniform());
    }
    return out;
  };
  const CvReport rep = modified_repeated_cv(ids, labels, noisy, CvOptions{10, 3, 5}, "noisy");
  double worst = 0.0;
  for (const auto &r : rep.repeats) {
    std::vector<double> s;
    std::vector<int> y;
    for (const auto &p : r.scores) {
      s.push_back(p.score);
      y.push_back(p.label);
    }
    worst = std::max(worst, std::abs(r.roc_auc - test::roc_pairwise(s, y)));
  }

  // Per fold each ranking is perfect; pooled the folds interleave.
  const std::vector<int> y4 = {1, 0, 0, 1};
  const FoldScorer shifted = [&](const std::vector<std::size_t> &,
                                 const std::vector<std::size_t> &test, int, int fold, int &) {
    std::vector<double> out;
    for (std::size_t i : test)
      out.push_back(fold == 0 ? (y4[i] ? 0.9 : 0.8) : (y4[i] ? 0.3 : 0.2));
    return out;
  };
  const CvReport small = modified_repeated_cv({"a", "b", "c", "d"}, y4, shifted,
                                              CvOptions{2, 1, 9}, "shifted");
  std::map<int, std::pair<std::vector<double>, std::vector<int>>> per_fold;
  for (const auto &p : small.repeats[0].scores) {
    per_fold[p.fold].first.push_back(p.score);
    per_fold[p.fold].second.push_back(p.label);
  }
  double averaged = 0.0;
  for (const auto &[f, sy] : per_fold)
    averaged += roc_auc(sy.first, sy.second) / static_cast<double>(per_fold.size());
  const double pooled = small.repeats[0].roc_auc;
  return {worst <= 1e-12 && std::abs(pooled - averaged) > 0.1,
          "max |pooled - oracle| " + sci(worst) + "; constructed pooled " +
              fmt(pooled, 2) + " vs per-fold mean " + fmt(averaged, 2)};
}

Outcome tps_estimator() {
  SynthConfig c;
  double abs_err = 0.0;
  Rng rng(808);
  for (int i = 0; i < 30; ++i) {
    PatientSpec spec;
    spec.patient_id = spec.slide_id = "T" + std::to_string(i);
    spec.target_tps = 0.1 + 0.85 * i / 29.0;
    spec.pattern = i % 2 ? StainPattern::Reactive : StainPattern::Constitutive;
    spec.target_tissue_tiles = 20 + static_cast<int>(rng.below(20));
    spec.seed = rng.next();
    const auto [slide, gt] = generate_slide(spec, c);
    abs_err += std::abs(tps_estimate(slide.pixels, gt.tumor_mask).tps - gt.true_tps);
  }
  const double mae = abs_err / 30.0;
  return {mae <= 0.03, "MAE " + sci(mae) + " over 30 slides, tps 0.10 to 0.95"};
}

Outcome enrichment_arithmetic() {
  std::vector<double> s(20, 0.9);
  std::vector<int> y(20, 0);
  for (int i = 0; i < 4; ++i)
    y[i] = 1;
  s[18] = s[19] = 0.1;
  const EnrichmentReport r = enrich(s, y, 0.5, "tps >= 0.5");
  const Interval w = wilson_interval(4, 18);
  const bool ok = r.n_selected == 18 && r.responders_selected == 4 &&
                  r.precision == 4.0 / 18.0 && r.accuracy == 6.0 / 20.0 &&
                  r.precision_ci.lo == w.lo && r.precision_ci.hi == w.hi &&
                  std::abs(w.lo - 0.0900) < 5e-4 && std::abs(w.hi - 0.4521) < 5e-4;
  return {ok, "precision " + fmt(100 * r.precision, 1) + "%, accuracy " +
                  fmt(100 * r.accuracy, 1) + "%, Wilson 95% [" + fmt(w.lo) + ", " +
                  fmt(w.hi) + "]"};
}

Outcome augmentation_contract() {
  SynthConfig c;
  c.n_patients = 8;
  c.n_test = 0;
  c.responder_fraction = 0.25;
  c.slide_size = 512;
  c.tile_size = 64;
  c.seed = 10;
  const SynthCohort cohort = generate_cohort(c);
  std::map<std::string, const SlideImage *> slides;
  for (const auto &s : cohort.slides)
    slides[s.slide_id] = &s;
  std::vector<std::vector<TileRecord>> per_patient;
  for (const auto &s : cohort.slides)
    per_patient.push_back(tile_slide(s, segment_tissue(s), 64, 0.05));
  std::size_t m = 0;
  for (const auto &t : per_patient)
    m = std::max(m, t.size());
  const auto out = augment_tiles(per_patient);
  bool counts = true, pixels = true;
  std::size_t augmented = 0;
  for (const auto &tiles : out) {
    counts = counts && tiles.size() == m;
    for (const auto &t : tiles) {
      if (!t.augmented())
        continue;
      ++augmented;
      TileRecord src = t;
      src.transform = Dihedral::Identity;
      src.aug_id = 0;
      const RgbImage &img = slides.at(t.slide_id)->pixels;
      pixels = pixels && extract_tile(img, t) == apply_dihedral(extract_tile(img, src), t.transform);
    }
  }
  return {counts && pixels && augmented > 0,
          std::to_string(out.size()) + " patients padded to " + std::to_string(m) + " tiles, " +
              std::to_string(augmented) + " augmented tiles pixel-identical"};
}

Outcome weighting_contract() {
  // Responder bags carry weight 4 from the bag builder.
  PipelineConfig pc;
  pc.tile_size = 64;
  pc.patch_size = 16;
  pc.features.patch_size = 16;
  FeatureStore store(pc.patch_grid(), kHandcraftedDim);
  Rng rng(1111);
  std::vector<PatientData> patients(2);
  std::vector<std::vector<TileRecord>> tumor(2);
  for (int i = 0; i < 2; ++i) {
    patients[i].patient_id = "P" + std::to_string(i);
    patients[i].response = 1 - i;
    TileRecord t;
    t.slide_id = "S" + std::to_string(i);
    t.tile_size = 64;
    t.tissue_fraction = 1.0;
    t.tumor_label = TumorLabel::Tumor;
    store.put(key_of(t), test::random_instances(16, kHandcraftedDim, rng));
    patients[i].tiles.push_back(t);
    tumor[i].push_back(t);
  }
  const auto bags = make_responder_bags(patients, tumor, false, store, pc);
  bool weights = true;
  for (const auto &b : bags)
    weights = weights && b.weight == (b.label ? 4.0 : 1.0);

  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const MilParams p = test::random_params({kHandcraftedDim, 24, 20, 12, trial % 2 == 1}, rng);
    const Eigen::MatrixXd x = test::random_instances(1 + static_cast<int>(rng.below(8)),
                                                     kHandcraftedDim, rng);
    const auto r = forward(x, p);
    const double l1 = loss_wbce(r.p, 1, 1.0), l4 = loss_wbce(r.p, 1, 4.0);
    worst = std::max(worst, std::abs(l4 - 4.0 * l1));
    std::vector<double> a, b;
    backward(r.cache, p, 1, 1.0).for_each_block(
        [&](std::string_view, const double *d, std::size_t n) { a.insert(a.end(), d, d + n); });
    backward(r.cache, p, 1, 4.0).for_each_block(
        [&](std::string_view, const double *d, std::size_t n) { b.insert(b.end(), d, d + n); });
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::abs(b[i] - 4.0 * a[i]));
  }
  return {weights && worst <= 1e-12,
          std::string("responder bag weight ") + (weights ? "4" : "wrong") +
              ", max |g4 - 4 g1| " + sci(worst)};
}

int run_cli(const std::string &args) {
  const std::string cmd = std::string(MILR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return status != -1 && WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path dir = g_work / "determinism";
  fs::create_directories(dir);
  json cfg = {{"paths", {{"cohort", (dir / "cohort").string()}, {"out", (dir / "cohort").string()}}},
              {"synth", {{"n_patients", 16}, {"n_test", 0}, {"slide_size", 512}, {"tile_size", 64}}},
              {"tiling", {{"tile_size", 64}}},
              {"features", {{"patch_size", 16}}},
              {"train_tumor", {{"epochs", 5}, {"hidden1", 32}, {"hidden2", 32}, {"attention", 16}}},
              {"train_responder",
               {{"epochs", 5}, {"hidden1", 32}, {"hidden2", 32}, {"attention", 16}}},
              {"eval", {{"folds", 4}, {"repeats", 2}}}};
  std::ofstream(dir / "config.json") << cfg.dump(2);
  const std::string c = " --config " + (dir / "config.json").string();
  if (run_cli("synth gen" + c) || run_cli("tile" + c) || run_cli("features extract" + c) ||
      run_cli("cv" + c))
    return {false, "cli pipeline failed"};
  fs::copy_file(dir / "cohort" / "run.json", dir / "run.json",
                fs::copy_options::overwrite_existing);
  const std::string first = slurp(dir / "cohort" / "report.json");
  if (run_cli("cv --config " + (dir / "run.json").string()))
    return {false, "cv from run.json failed"};
  const std::string second = slurp(dir / "cohort" / "report.json");
  return {!first.empty() && first == second,
          "report.json " + std::to_string(first.size()) + " bytes, rerun " +
              (first == second ? "identical" : "differs")};
}

struct Criterion {
  int id;
  const char *name;
  std::function<Outcome()> run;
};

} // namespace

int main(int argc, char **argv) {
  const std::vector<Criterion> all = {
      {1, "gradient fidelity", gradient_fidelity},
      {2, "MIL invariants", mil_invariants},
      {3, "Otsu oracle", otsu_agreement},
      {4, "tiling partition", tiling_partition},
      {5, "tumor recognition", tumor_recognition},
      {6, "two-step vs TPS", two_step_vs_tps},
      {7, "CV pooling oracle", cv_pooling},
      {8, "TPS estimator", tps_estimator},
      {9, "enrichment arithmetic", enrichment_arithmetic},
      {10, "augmentation contract", augmentation_contract},
      {11, "weighting contract", weighting_contract},
      {12, "determinism", determinism},
  };

  std::set<int> chosen;
  bool keep = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      g_work = argv[++i];
      keep = true;
    } else {
      chosen.insert(std::atoi(a.c_str()));
    }
  }
  if (g_work.empty())
    g_work = fs::temp_directory_path() / ("milr-acceptance-" + std::to_string(::getpid()));
  fs::create_directories(g_work);

  int failed = 0;
  for (const auto &c : all) {
    if (!chosen.empty() && !chosen.count(c.id))
      continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception &e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  %2d %-22s %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  if (!keep)
    fs::remove_all(g_work);
  return failed ? 1 : 0;
}
