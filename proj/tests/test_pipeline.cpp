// Copyright 2026 The koopscore Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <set>

#include "doctest.h"
#include "error.hpp"
#include "helpers.hpp"
#include "pipeline.hpp"
#include "text.hpp"

using namespace koopscore;
namespace fs = std::filesystem;

namespace {

// Small cohort that trains in a few seconds.
PipelineConfig small_config(int n = 20) {
  const nlohmann::json j = {
      {"seed", 7},
      {"threads", 2},
      {"sequence", {{"height", 16}, {"width", 16}, {"t_target", 16}}},
      {"dictionary", {{"rank", 6}}},
      {"train", {{"epochs", 15}, {"folds", 3}, {"batch_size", 8}}},
      {"synth", {{"n_patients", n}, {"frames", 16}, {"height", 16}, {"width", 16}}},
  };
  return parse_config(j);
}

struct SmallRun {
  fs::path dir;
  TrainOutput train;
};

// One synth + train shared by the tests below.
const SmallRun& small_run() {
  static const SmallRun run = [] {
    SmallRun r;
    r.dir = kstest::scratch("pipeline_run");
    const auto cfg = small_config();
    cmd_synth(cfg, -1, r.dir / "data");
    r.train = cmd_train(cfg, r.dir / "data" / "manifest.json", r.dir / "model");
    return r;
  }();
  return run;
}

bool disjoint(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  const std::set<std::string> s(a.begin(), a.end());
  return std::none_of(b.begin(), b.end(), [&](const auto& x) { return s.count(x) > 0; });
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("threshold grid") {
  const auto g = threshold_grid(0.0, 1.0, 0.01);
  REQUIRE(g.size() == 101);
  CHECK(g.front() == 0.0);
  CHECK(g[45] == 0.45);
  CHECK(g.back() == 1.0);
  CHECK(threshold_grid(0.2, 0.3, 0.05).size() == 3);
  CHECK_THROWS_AS(threshold_grid(0.0, 1.0, 0.0), ValidationError);
}

TEST_CASE("config parsing") {
  const PipelineConfig def;
  CHECK(def.evaluation.thresholds.size() == 101);
  CHECK(def.evaluation.classification_threshold == 0.45);
  CHECK(def.train.folds == 5);

  const auto cfg = parse_config(nlohmann::json{{"seed", 11}, {"train", {{"epochs", 3}}}});
  CHECK(cfg.train.epochs == 3);
  CHECK(cfg.train.learning_rate == def.train.learning_rate);
  CHECK(cfg.train.seed == 11);
  CHECK(cfg.synth.seed == 11);
  CHECK(cfg.dictionary.seed == 11);

  // Round trip through the printed form.
  const auto j = config_to_json(small_config());
  CHECK(config_to_json(parse_config(nlohmann::json::parse(j.dump()))).dump() == j.dump());

  CHECK_THROWS_AS(parse_config(nlohmann::json{{"sed", 1}}), ValidationError);
  CHECK_THROWS_AS(parse_config(nlohmann::json{{"train", {{"epoch", 1}}}}), ValidationError);
  CHECK_THROWS_AS(parse_config(nlohmann::json{{"evaluation", {{"thresholds", {0.5, 0.4}}}}}), ValidationError);
  CHECK_THROWS_AS(parse_config(nlohmann::json{{"evaluation", {{"thresholds", {0.5, 1.5}}}}}), ValidationError);
  CHECK_THROWS_AS(parse_config(nlohmann::json{{"dictionary", {{"kind", "pca-cubic"}}}}), ValidationError);
  CHECK_THROWS_AS(load_config(kstest::scratch("cfg_missing") / "none.json"), IoError);
}

TEST_CASE("worker count honors the environment cap") {
  PipelineConfig cfg;
  cfg.threads = 8;
  ::unsetenv("KOOPSCORE_THREADS");
  CHECK(worker_count(cfg) == 8);
  ::setenv("KOOPSCORE_THREADS", "3", 1);
  CHECK(worker_count(cfg) == 3);
  cfg.threads = 2;
  CHECK(worker_count(cfg) == 2);
  ::unsetenv("KOOPSCORE_THREADS");
  cfg.threads = 0;
  CHECK(worker_count(cfg) >= 1);
}

TEST_CASE("parallel_for visits every index and rethrows the lowest failure") {
  std::vector<std::atomic<int>> hits(200);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i]++; });
  for (const auto& h : hits) CHECK(h.load() == 1);
  try {
    parallel_for(50, 3, [](std::size_t i) {
      if (i == 7 || i == 31) throw ValidationError("index " + std::to_string(i));
    });
    FAIL("expected an exception");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()) == "index 7");
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("preprocess resizes and resamples") {
  std::vector<float> px(10 * 6 * 8);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<float>(i % 17) / 16.0f;
  const FrameSequence seq(10, 6, 8, 0.02, ViewLabel::kA2C, "P", px);
  SequenceConfig cfg;
  cfg.enhance.height = 4;
  cfg.enhance.width = 5;
  cfg.t_target = 7;
  const auto out = preprocess(seq, cfg);
  CHECK(out.frames() == 7);
  CHECK(out.height() == 4);
  CHECK(out.width() == 5);
  CHECK(out.view() == ViewLabel::kA2C);
}

TEST_CASE("manifest validation names the missing field") {
  const nlohmann::json ok = {{"patients",
                              {{{"patient_id", "A"},
                                {"label", 1},
                                {"split", "train"},
                                {"clinical", {{"ef", 40}, {"dim", 50}, {"age", 60}, {"sex", 1}}},
                                {"views", {{"A4C", "seq/A_A4C.ksq"}}}}}}};
  const auto m = parse_manifest(ok, "/tmp");
  REQUIRE(m.patients.size() == 1);
  CHECK(m.patients[0].views.at(ViewLabel::kA4C) == "seq/A_A4C.ksq");
  CHECK(manifest_to_json(parse_manifest(nlohmann::json::parse(manifest_to_json(m).dump()), "/tmp")).dump() ==
        manifest_to_json(m).dump());

  auto missing = ok;
  missing["patients"][0]["clinical"].erase("age");
  try {
    parse_manifest(missing, "/tmp");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("'age'") != std::string::npos);
  }
  auto dup = ok;
  dup["patients"].push_back(ok["patients"][0]);
  CHECK_THROWS_AS(parse_manifest(dup, "/tmp"), ValidationError);
  auto bad_split = ok;
  bad_split["patients"][0]["split"] = "dev";
  CHECK_THROWS_AS(parse_manifest(bad_split, "/tmp"), ValidationError);
}

TEST_CASE("synth writes every view and is deterministic") {
  const auto cfg = small_config(10);
  const auto a = kstest::scratch("synth_a"), b = kstest::scratch("synth_b");
  const auto ra = cmd_synth(cfg, 10, a);
  cmd_synth(cfg, 10, b);
  CHECK(ra.patients == 10);
  CHECK(ra.sequences == 50);
  int files = 0;
  for (const auto& e : fs::directory_iterator(a / "seq")) files += e.path().extension() == ".ksq";
  CHECK(files == 50);
  CHECK(read_file(a / "manifest.json") == read_file(b / "manifest.json"));
  CHECK(read_file(a / "oracle.csv") == read_file(b / "oracle.csv"));
  const auto man = load_manifest(a / "manifest.json");
  for (const auto& p : man.patients)
    for (const auto& [view, rel] : p.views)
      CHECK(read_file(a / rel) == read_file(b / rel));
}

TEST_CASE("train writes the fold models and report files") {
  const auto& r = small_run();
  for (const char* f : {"fold_0.krm", "fold_1.krm", "fold_2.krm", "model.krm", "cv_scores.csv", "train_scores.csv",
                        "metrics.csv", "history.csv", "audit.json"})
    CHECK(fs::exists(r.dir / "model" / f));
  CHECK(r.train.cv.folds.size() == 3);
  CHECK(r.train.audit.size() == 4);
  const auto cv = parse_scores_csv(read_file(r.dir / "model" / "cv_scores.csv"));
  const auto man = load_manifest(r.dir / "data" / "manifest.json");
  const auto n_train = std::count_if(man.patients.begin(), man.patients.end(), [](const auto& p) { return p.split == "train"; });
  CHECK(static_cast<long>(cv.size()) == n_train);
  for (const auto& row : cv) CHECK((row.fold >= 0 && row.fold < 3));
}

TEST_CASE("fold hygiene audit") {
  const auto& r = small_run();
  const auto& held = r.train.held_out_ids;
  CHECK(!held.empty());
  for (const auto& a : r.train.audit) {
    for (const auto* ids : {&a.dictionary_ids, &a.normalization_ids, &a.gradient_ids}) {
      CHECK(!ids->empty());
      CHECK(disjoint(*ids, held));
      CHECK(disjoint(*ids, a.validation_ids));
    }
    if (a.fold < 0) CHECK(a.validation_ids.empty());
  }
  const auto audit = nlohmann::json::parse(read_file(r.dir / "model" / "audit.json"));
  for (const auto& f : audit["fits"]) CHECK(f["held_out_overlap"] == 0);
}

TEST_CASE("scoring the training split reproduces training-time scores") {
  const auto& r = small_run();
  const auto cfg = small_config();
  const auto out = kstest::scratch("pipeline_score");
  cmd_score(cfg, r.dir / "model" / "model.krm", r.dir / "data" / "manifest.json", "train", "", out);
  CHECK(read_file(out / "scores.csv") == read_file(r.dir / "model" / "train_scores.csv"));

  const auto one = cmd_score(cfg, r.dir / "model" / "model.krm", r.dir / "data" / "manifest.json", "all", "P0003",
                             kstest::scratch("pipeline_one"));
  REQUIRE(one.size() == 1);
  CHECK(one[0].patient_id == "P0003");
  CHECK_THROWS_AS(cmd_score(cfg, r.dir / "model" / "model.krm", r.dir / "data" / "manifest.json", "all", "nobody",
                            kstest::scratch("pipeline_none")),
                  ValidationError);
}

TEST_CASE("scoring an empty manifest writes only the header") {
  const auto& r = small_run();
  const auto dir = kstest::scratch("pipeline_empty");
  write_file(dir / "manifest.json", R"({"patients": []})");
  const auto s = cmd_score(small_config(), r.dir / "model" / "model.krm", dir / "manifest.json", "all", "", dir / "out");
  CHECK(s.empty());
  CHECK(read_file(dir / "out" / "scores.csv") == "patient_id,value,dyn,clin,inter,label,age\n");
}

TEST_CASE("missing clinical field fails scoring with the field name") {
  const auto& r = small_run();
  const auto dir = kstest::scratch("pipeline_noclin");
  auto man = nlohmann::json::parse(read_file(r.dir / "data" / "manifest.json"));
  man["patients"][0]["clinical"].erase("dim");
  write_file(dir / "manifest.json", man.dump());
  try {
    cmd_score(small_config(), r.dir / "model" / "model.krm", dir / "manifest.json", "all", "", dir / "out");
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("'dim'") != std::string::npos);
  }
}

TEST_CASE("training is deterministic") {
  const auto& r = small_run();
  const auto again = kstest::scratch("pipeline_again");
  cmd_train(small_config(), r.dir / "data" / "manifest.json", again);
  for (const char* f : {"model.krm", "fold_1.krm", "metrics.csv", "history.csv", "cv_scores.csv", "audit.json"})
    CHECK(read_file(again / f) == read_file(r.dir / "model" / f));
}

TEST_CASE("training rejects a single-class split") {
  const auto& r = small_run();
  const auto dir = kstest::scratch("pipeline_oneclass");
  auto man = nlohmann::json::parse(read_file(r.dir / "data" / "manifest.json"));
  for (auto& p : man["patients"]) p["label"] = 0;
  write_file(dir / "manifest.json", man.dump());
  // Paths stay relative to the original data directory.
  fs::copy(r.dir / "data" / "seq", dir / "seq", fs::copy_options::recursive);
  CHECK_THROWS_AS(cmd_train(small_config(), dir / "manifest.json", dir / "model"), ValidationError);
}

TEST_CASE("evaluate: worked example and grid size") {
  const auto dir = kstest::scratch("pipeline_eval");
  write_file(dir / "s.csv",
             "patient_id,value,dyn,clin,inter,label,age\n"
             "A,0.1,0,0,0,0,50\nB,0.4,0,0,0,0,60\nC,0.35,0,0,0,1,70\nD,0.8,0,0,0,1,80\n");
  const auto ev = cmd_evaluate(PipelineConfig{}, dir / "s.csv", dir / "report");
  CHECK(ev.auc == 0.75);
  const auto lines = split(read_file(dir / "report" / "metrics.csv"), '\n');
  int agg = 0;
  for (const auto& l : lines)
    if (l.rfind("aggregate,", 0) == 0) {
      ++agg;
      CHECK(split(l, ',')[2] == "0.75");
    }
  CHECK(agg == 101);

  // One marker per patient, radius growing with age.
  const auto svg = read_file(dir / "report" / "scatter.svg");
  std::vector<double> radii;
  for (std::size_t pos = svg.find("<circle"); pos != std::string::npos; pos = svg.find("<circle", pos + 1)) {
    const auto r = svg.find(" r=\"", pos);
    radii.push_back(std::stod(svg.substr(r + 4)));
  }
  REQUIRE(radii.size() == 4);
  CHECK(std::is_sorted(radii.begin(), radii.end()));
  CHECK(radii.front() < radii.back());

  write_file(dir / "one.csv", "patient_id,value,dyn,clin,inter,label,age\nA,0.1,0,0,0,1,50\n");
  CHECK_THROWS_AS(cmd_evaluate(PipelineConfig{}, dir / "one.csv", dir / "r2"), ValidationError);
}

TEST_CASE("scores csv parsing") {
  const auto rows = parse_scores_csv("patient_id,value,dyn,clin,inter,label,age,fold\r\nA,0.25,1,2,3,1,61,2\r\n");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].score == 0.25);
  CHECK(rows[0].label == 1);
  CHECK(rows[0].age == 61);
  CHECK(rows[0].fold == 2);
  CHECK_THROWS_AS(parse_scores_csv("patient_id,value,label\nA,1.5,1\n"), ValidationError);
  CHECK_THROWS_AS(parse_scores_csv("patient_id,value,label\nA,x,1\n"), ValidationError);
  CHECK_THROWS_AS(parse_scores_csv("patient_id,label\nA,1\n"), ValidationError);
  CHECK_THROWS_AS(parse_scores_csv(""), ValidationError);
}

TEST_CASE("decompose command") {
  const auto& r = small_run();
  const auto man = load_manifest(r.dir / "data" / "manifest.json");
  const auto seq = r.dir / "data" / man.patients[0].views.at(ViewLabel::kPLAX);
  const auto out = kstest::scratch("pipeline_decompose") / "dec.json";
  const auto j = cmd_decompose(small_config(), seq, r.dir / "model" / "model.krm", out);
  CHECK(j["modes"].size() >= 1);
  CHECK(nlohmann::json::parse(read_file(out)) == nlohmann::json::parse(j.dump()));
  const auto own = cmd_decompose(small_config(), seq, "", "");
  CHECK(own["modes"].size() >= 1);
}

}  // TEST_SUITE
