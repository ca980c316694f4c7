// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The milr Authors

#include <doctest.h>

#include <map>
#include <set>
#include <thread>

#include <json.hpp>

#include "annotation.hpp"
#include "cohort.hpp"
#include "rng.hpp"
#include "synth.hpp"
#include "test_util.hpp"

// After Eigen: <resolv.h> defines a _res macro that collides with it.
#include <httplib.h>

using namespace milr;
using milr::test::code_of;
using milr::test::TempDir;
using json = nlohmann::json;

namespace {

LabelRecord rec(const std::string &slide, int x, int y, TumorLabel l,
                const std::string &who = "a", std::int64_t ts = 1) {
  return {slide, x, y, l, who, ts};
}

// Replays the log from its raw lines with nothing shared with the
// production fold: undo lines retract the entry whose seq they target.
std::map<std::tuple<std::string, int, int>, std::string>
replay_oracle(const std::filesystem::path &path) {
  std::vector<json> lines;
  std::ifstream in(path);
  for (std::string s; std::getline(in, s);)
    if (!s.empty())
      lines.push_back(json::parse(s));
  std::set<std::uint64_t> retracted;
  for (const auto &j : lines)
    if (j.value("undo", false))
      retracted.insert(j.at("target").get<std::uint64_t>());
  std::map<std::tuple<std::string, int, int>, std::pair<std::uint64_t, std::string>> best;
  for (const auto &j : lines) {
    if (j.value("undo", false) || retracted.count(j.at("seq").get<std::uint64_t>()))
      continue;
    const auto key = std::make_tuple(j.at("slide").get<std::string>(), j.at("x").get<int>(),
                                     j.at("y").get<int>());
    const auto seq = j.at("seq").get<std::uint64_t>();
    if (!best.count(key) || best[key].first < seq)
      best[key] = {seq, j.at("label").get<std::string>()};
  }
  std::map<std::tuple<std::string, int, int>, std::string> out;
  for (const auto &[k, v] : best)
    out[k] = v.second;
  return out;
}

// Small generated cohort with tiles written next to it.
struct CohortFixture {
  TempDir dir{"annot"};
  std::vector<TileRecord> tiles;

  CohortFixture() {
    SynthConfig c;
    c.n_patients = 2;
    c.responder_fraction = 0.5;
    c.slide_size = 256;
    c.tile_size = 64;
    c.tiles_per_patient_range = {8, 12};
    write_synth_cohort(c, dir.path());
    tiles = tile_cohort(dir.path(), read_cohort(dir.path()), 64, 0.05);
    write_tiles(tiles, dir / kTilesFile);
  }

  ServiceConfig service_config() const {
    ServiceConfig s;
    s.cohort_dir = dir.path();
    s.labels_path = dir / kLabelLogFile;
    s.port = 0;
    s.tile_size = 64;
    return s;
  }
};

json body_of(const httplib::Result &r) {
  REQUIRE(r);
  return json::parse(r->body);
}

} // namespace

TEST_CASE("last write wins and undo retracts") {
  TempDir dir;
  LabelLog log(dir / "l.jsonl");
  log.append(rec("s", 0, 0, TumorLabel::Tumor));
  log.append(rec("s", 0, 0, TumorLabel::NonTumor));
  CHECK(log.effective().at({"s", 0, 0}).label == TumorLabel::NonTumor);

  log.append(rec("s", 1, 0, TumorLabel::Tumor));
  log.undo_last("a", 2);
  CHECK(log.effective().count({"s", 1, 0}) == 0);
  // Retracting the superseding label brings back the one it replaced.
  log.undo_last("a", 3);
  CHECK(log.effective().at({"s", 0, 0}).label == TumorLabel::Tumor);
  log.undo_last("a", 4);
  CHECK(log.effective().empty());
  CHECK(code_of([&] { log.undo_last("a", 5); }) == ErrorCode::NothingToUndo);
  CHECK(code_of([&] { log.undo_last("nobody", 5); }) == ErrorCode::NothingToUndo);
}

TEST_CASE("the log survives a restart and is append-only") {
  TempDir dir;
  const auto path = dir / "l.jsonl";
  std::string before;
  {
    LabelLog log(path);
    log.append(rec("s", 0, 0, TumorLabel::Tumor));
    log.append(rec("s", 2, 1, TumorLabel::NonTumor, "b"));
    log.undo_last("a", 9);
    before = milr::test::slurp(path);
  }
  LabelLog again(path);
  CHECK(again.entries().size() == 3);
  CHECK(again.effective().size() == 1);
  again.append(rec("s", 3, 3, TumorLabel::Tumor));
  const std::string after = milr::test::slurp(path);
  CHECK(after.substr(0, before.size()) == before);
  CHECK(again.entries().back().seq > again.entries()[2].seq);
}

TEST_CASE("folding matches an independent replay") {
  TempDir dir;
  Rng rng(3);
  const auto path = dir / "l.jsonl";
  {
    LabelLog log(path);
    const char *who[] = {"a", "b", "c"};
    for (int i = 0; i < 400; ++i) {
      const std::string annotator = who[rng.below(3)];
      if (rng.below(4) == 0) {
        try {
          log.undo_last(annotator, i);
        } catch (const Error &) {
        }
      } else {
        log.append(rec("s" + std::to_string(rng.below(2)), int(rng.below(4)), int(rng.below(4)),
                       rng.below(2) ? TumorLabel::Tumor : TumorLabel::NonTumor, annotator, i));
      }
    }
  }
  const auto folded = fold_label_log(read_label_log(path));
  const auto oracle = replay_oracle(path);
  REQUIRE(folded.size() == oracle.size());
  for (const auto &[k, r] : folded)
    CHECK(oracle.at({k.slide_id, k.grid_x, k.grid_y}) == tumor_label_name(r.label));

  // The snapshot carries exactly the folded state.
  CHECK(export_labels(path, dir / "labels.jsonl") == folded.size());
  const TileLabels snap = read_label_snapshot(dir / "labels.jsonl");
  CHECK(snap.size() == folded.size());
  for (const auto &[k, r] : folded)
    CHECK(snap.at(k) == r.label);
}

TEST_CASE("export of an empty log is empty") {
  TempDir dir;
  { LabelLog log(dir / "l.jsonl"); }
  CHECK(export_labels(dir / "l.jsonl", dir / "labels.jsonl") == 0);
  CHECK(milr::test::slurp(dir / "labels.jsonl").empty());
}

TEST_CASE("unwritable label path") {
  CHECK(code_of([] { LabelLog log("/nonexistent-dir/sub/l.jsonl"); }) ==
        ErrorCode::UnwritableLabels);
}

TEST_CASE("service endpoints") {
  CohortFixture fx;
  AnnotationService svc(fx.service_config(), service_tiles(fx.service_config()));
  svc.start();
  httplib::Client cli("127.0.0.1", svc.port());
  const long total = static_cast<long>(fx.tiles.size());

  json p = body_of(cli.Get("/api/progress"));
  CHECK(p.at("labeled") == 0);
  CHECK(p.at("total") == total);

  const json cohort = body_of(cli.Get("/api/cohort"));
  CHECK(cohort.at("patients").size() == 2);
  CHECK_FALSE(cohort.at("patients")[0].contains("response"));

  const TileRecord &t0 = fx.tiles[0];
  const json label = {{"slide", t0.slide_id}, {"x", t0.grid_x}, {"y", t0.grid_y},
                      {"label", "tumor"}, {"annotator", "pat"}};
  auto res = cli.Post("/api/label", label.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 200);
  p = body_of(cli.Get("/api/progress"));
  CHECK(p.at("labeled") == 1);

  const json labeled = body_of(cli.Get("/api/tiles?status=labeled"));
  CHECK(labeled.at("total") == 1);
  const json unlabeled = body_of(cli.Get("/api/tiles?status=unlabeled"));
  CHECK(unlabeled.at("total") == total - 1);
  CHECK(unlabeled.at("tiles").size() <= 50);

  const json bogus = {{"slide", t0.slide_id}, {"x", 999}, {"y", 0}, {"label", "tumor"}};
  res = cli.Post("/api/label", bogus.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(json::parse(res->body).at("error") == "UnknownTile");
  CHECK(json::parse(res->body).contains("message"));

  res = cli.Get("/api/tile/" + t0.slide_id + "/" + std::to_string(t0.grid_x) + "/" +
                std::to_string(t0.grid_y) + "/image.png");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "image/png");
  CHECK(res->body.substr(1, 3) == "PNG");
  CHECK(cli.Get("/api/tile/nope/0/0/image.png")->status == 404);
  CHECK(cli.Get("/api/tiles?slide=nope")->status == 404);

  res = cli.Post("/api/undo", json{{"annotator", "pat"}}.dump(), "application/json");
  CHECK(res->status == 200);
  CHECK(body_of(cli.Get("/api/progress")).at("labeled") == 0);
  res = cli.Post("/api/undo", json{{"annotator", "pat"}}.dump(), "application/json");
  CHECK(res->status == 409);
  CHECK(json::parse(res->body).at("error") == "NothingToUndo");

  // A second service cannot take the same port.
  ServiceConfig clash = fx.service_config();
  clash.port = svc.port();
  AnnotationService other(clash, fx.tiles);
  CHECK(code_of([&] { other.start(); }) == ErrorCode::PortInUse);
  svc.stop();
}

TEST_CASE("concurrent labels all land intact and feed tumor bags") {
  CohortFixture fx;
  const ServiceConfig sc = fx.service_config();
  {
    AnnotationService svc(sc, fx.tiles);
    svc.start();
    const int port = svc.port();
    std::vector<std::thread> workers;
    for (int w = 0; w < 4; ++w)
      workers.emplace_back([&, w] {
        httplib::Client cli("127.0.0.1", port);
        for (std::size_t i = w; i < fx.tiles.size(); i += 4) {
          const auto &t = fx.tiles[i];
          const json b = {{"slide", t.slide_id}, {"x", t.grid_x}, {"y", t.grid_y},
                          {"label", i % 2 ? "tumor" : "non_tumor"},
                          {"annotator", "w" + std::to_string(w)}};
          auto r = cli.Post("/api/label", b.dump(), "application/json");
          CHECK((r && r->status == 200));
        }
      });
    for (auto &t : workers)
      t.join();
    httplib::Client cli("127.0.0.1", port);
    CHECK(body_of(cli.Get("/api/progress")).at("labeled") == fx.tiles.size());
    svc.stop();
  }
  const auto entries = read_label_log(sc.labels_path);
  CHECK(entries.size() == fx.tiles.size());
  std::set<std::uint64_t> seqs;
  for (const auto &e : entries)
    seqs.insert(e.seq);
  CHECK(seqs.size() == entries.size());

  // A restarted service sees the same state.
  {
    AnnotationService svc(sc, fx.tiles);
    svc.start();
    httplib::Client cli("127.0.0.1", svc.port());
    CHECK(body_of(cli.Get("/api/progress")).at("labeled") == fx.tiles.size());
    svc.stop();
  }

  export_labels(sc.labels_path, fx.dir / kLabelsFile);
  auto tiles = fx.tiles;
  CHECK(attach_labels(tiles, read_label_snapshot(fx.dir / kLabelsFile)) == tiles.size());
  const auto patients = build_patients(read_cohort(fx.dir.path()), tiles);
  PipelineConfig pc;
  pc.tile_size = 64;
  pc.patch_size = 32;
  FeatureStore store(2, kHandcraftedDim);
  for (const auto &t : tiles)
    store.put(key_of(t), Eigen::MatrixXd::Zero(4, kHandcraftedDim));
  CHECK(make_tumor_bags(patients, store, pc).size() == tiles.size());
}
