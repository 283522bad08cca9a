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
#include <cmath>
#include <random>

#include "doctest.h"
#include "error.hpp"
#include "eval.hpp"
#include "helpers.hpp"
#include "linalg.hpp"
#include "pipeline.hpp"
#include "text.hpp"

using namespace koopscore;

namespace {

std::vector<ScoredRow> rows_of(const std::vector<double>& scores, const std::vector<int>& labels) {
  std::vector<ScoredRow> out;
  for (std::size_t i = 0; i < scores.size(); ++i) out.push_back({patient_name(static_cast<int>(i)), scores[i], labels[i], 50.0 + i, -1});
  return out;
}

std::vector<ScoredRow> random_rows(std::mt19937_64& rng, int n, int levels) {
  std::vector<ScoredRow> out;
  for (int i = 0; i < n; ++i) {
    const int y = i < 2 ? i : (uniform01(rng) < 0.5);
    // Coarse levels force ties.
    const double s = std::floor((0.3 * y + 0.7 * uniform01(rng)) * levels) / levels;
    out.push_back({patient_name(i), s, y, 40.0 + 40 * uniform01(rng), -1});
  }
  return out;
}

double pair_oracle(const std::vector<ScoredRow>& rows) {
  double num = 0.0, den = 0.0;
  for (const auto& p : rows)
    for (const auto& n : rows)
      if (p.label == 1 && n.label == 0) {
        den += 1;
        num += p.score > n.score ? 1.0 : p.score == n.score ? 0.5 : 0.0;
      }
  return num / den;
}

std::vector<double> grid() { return threshold_grid(0.0, 1.0, 0.05); }

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("roc: perfect and uninformative scores") {
  const auto perfect = rows_of({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
  const auto c = roc(perfect);
  CHECK(c.auc == 1.0);
  bool corner = false;
  for (std::size_t i = 0; i < c.fpr.size(); ++i) corner |= c.fpr[i] == 0.0 && c.tpr[i] == 1.0;
  CHECK(corner);

  const auto flat = roc(rows_of({0.5, 0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1, 1}));
  REQUIRE(flat.fpr.size() == 2);
  CHECK(flat.fpr == std::vector<double>{0.0, 1.0});
  CHECK(flat.tpr == std::vector<double>{0.0, 1.0});
  CHECK(flat.auc == 0.5);
}

TEST_CASE("roc: worked example") {
  const auto rows = rows_of({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
  CHECK(roc(rows).auc == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(auc_concordance(rows) == 0.75);
  CHECK(pair_oracle(rows) == 0.75);
  CHECK_THROWS_AS(roc(rows_of({0.1, 0.2}, {1, 1})), ValidationError);
  CHECK_THROWS_AS(auc_concordance(rows_of({0.1, 0.2}, {0, 0})), ValidationError);
}

TEST_CASE("roc curve shape and area oracle") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto rows = random_rows(rng, 5 + trial, trial % 2 ? 6 : 1000);
    const auto c = roc(rows);
    CHECK(c.fpr.front() == 0.0);
    CHECK(c.tpr.front() == 0.0);
    CHECK(c.fpr.back() == 1.0);
    CHECK(c.tpr.back() == 1.0);
    for (std::size_t i = 1; i < c.fpr.size(); ++i) {
      CHECK(c.fpr[i] >= c.fpr[i - 1]);
      CHECK(c.tpr[i] >= c.tpr[i - 1]);
    }
    CHECK(std::abs(c.auc - auc_concordance(rows)) <= 1e-12);
    CHECK(std::abs(c.auc - pair_oracle(rows)) <= 1e-12);

    // Complement under label reversal and invariance under monotone maps.
    auto flipped = rows, mapped = rows;
    for (auto& r : flipped) r.label = 1 - r.label;
    for (auto& r : mapped) r.score = 1.0 / (1.0 + std::exp(-7.0 * r.score + 2.0));
    CHECK(auc_concordance(flipped) == doctest::Approx(1.0 - c.auc).epsilon(1e-12));
    CHECK(roc(mapped).auc == doctest::Approx(c.auc).epsilon(1e-12));
  }
}

TEST_CASE("sensitivity / specificity sweep") {
  const auto rows = rows_of({0.1, 0.4, 0.35, 0.8, 0.6, 0.2}, {0, 0, 1, 1, 1, 0});
  const std::vector<double> th = {0.0, 0.35, 0.5, 0.9};
  const auto sw = sens_spec_sweep(rows, th);
  REQUIRE(sw.size() == 4);
  CHECK(sw[0].sensitivity == 1.0);
  CHECK(sw[0].specificity == 0.0);
  // >= rule: 0.35 counts as positive at threshold 0.35.
  CHECK(sw[1].sensitivity == 1.0);
  CHECK(sw[1].specificity == doctest::Approx(2.0 / 3.0));
  CHECK(sw[2].sensitivity == doctest::Approx(2.0 / 3.0));
  CHECK(sw[2].specificity == 1.0);
  CHECK(sw[3].sensitivity == 0.0);
  CHECK(sw[3].specificity == 1.0);
  CHECK(sw[2].accuracy == doctest::Approx(5.0 / 6.0));

  std::mt19937_64 rng(4);
  const auto g = grid();
  for (int trial = 0; trial < 20; ++trial) {
    const auto r = random_rows(rng, 30, 20);
    const auto s = sens_spec_sweep(r, g);
    for (std::size_t i = 1; i < s.size(); ++i) {
      CHECK(s[i].sensitivity <= s[i - 1].sensitivity);
      CHECK(s[i].specificity >= s[i - 1].specificity);
    }
  }
  const std::vector<double> desc = {0.5, 0.4};
  CHECK_THROWS_AS(sens_spec_sweep(rows, desc), ValidationError);
  CHECK_THROWS_AS(sens_spec_sweep(rows, std::vector<double>{}), ValidationError);
}

TEST_CASE("sweep crossing") {
  std::vector<SweepPoint> s = {{0.3, 1.0, 0.2, 0}, {0.4, 0.8, 0.6, 0}, {0.5, 0.6, 0.9, 0}};
  // sens - spec goes 0.2 -> -0.3 between 0.4 and 0.5.
  CHECK(*sweep_crossing(s) == doctest::Approx(0.44).epsilon(1e-12));
  std::vector<SweepPoint> never = {{0.3, 1.0, 0.2, 0}, {0.4, 0.9, 0.3, 0}};
  CHECK(!sweep_crossing(never).has_value());
  std::vector<SweepPoint> touch = {{0.3, 1.0, 0.2, 0}, {0.4, 0.7, 0.7, 0}, {0.5, 0.6, 0.9, 0}};
  CHECK(*sweep_crossing(touch) == doctest::Approx(0.4));
}

TEST_CASE("confusion counts against enumeration") {
  const auto rows = rows_of({0.2, 0.45, 0.5, 0.9}, {0, 1, 0, 1});
  const auto c = confusion(rows, 0.45);
  CHECK(c.tp == 2);
  CHECK(c.fp == 1);
  CHECK(c.tn == 1);
  CHECK(c.fn == 0);
  CHECK(c.accuracy == 0.75);
  CHECK(c.sensitivity == 1.0);
  CHECK(c.specificity == 0.5);

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto r = random_rows(rng, 4, 10);
    const double t = uniform01(rng);
    int tp = 0, fp = 0, tn = 0, fn = 0;
    for (const auto& x : r) {
      const bool pos = x.score >= t;
      (x.label ? (pos ? tp : fn) : (pos ? fp : tn))++;
    }
    const auto k = confusion(r, t);
    CHECK(k.tp == tp);
    CHECK(k.fp == fp);
    CHECK(k.tn == tn);
    CHECK(k.fn == fn);
    CHECK(k.accuracy == doctest::Approx((tp + tn) / 4.0));
  }

  const auto all_right = confusion(rows_of({0.1, 0.9}, {0, 1}), 0.5);
  CHECK(all_right.accuracy == 1.0);
  const auto only_neg = confusion(rows_of({0.1}, {0}), 0.5);
  CHECK(std::isnan(only_neg.sensitivity));
  CHECK_THROWS_AS(confusion(std::vector<ScoredRow>{}, 0.5), ValidationError);
}

TEST_CASE("cohort summary") {
  const std::vector<double> one = {42};
  const auto s1 = summarize_cohort(one);
  CHECK(s1.mean == 42);
  CHECK(s1.sd == 0);
  CHECK(s1.min == 42);
  CHECK(s1.max == 42);
  CHECK(s1.median == 42);
  CHECK(s1.q1 == 42);
  CHECK(s1.q3 == 42);

  // Order statistics at (n-1)p = 0.75, 1.5, 2.25.
  const std::vector<double> four = {4, 1, 3, 2};
  const auto s4 = summarize_cohort(four);
  CHECK(s4.q1 == 1.75);
  CHECK(s4.median == 2.5);
  CHECK(s4.q3 == 3.25);
  CHECK(s4.mean == 2.5);
  CHECK(s4.sd == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-15));

  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> v(3 + trial);
    for (auto& x : v) x = std::round(18 + 78 * uniform01(rng));
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    auto q = [&](double p) {
      const double h = (sorted.size() - 1) * p;
      const auto lo = static_cast<std::size_t>(std::floor(h));
      const auto hi = std::min(lo + 1, sorted.size() - 1);
      return sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]);
    };
    const auto s = summarize_cohort(v);
    CHECK(s.min == sorted.front());
    CHECK(s.max == sorted.back());
    CHECK(s.median == q(0.5));
    CHECK(s.q1 == q(0.25));
    CHECK(s.q3 == q(0.75));
    CHECK(s.n == static_cast<int>(v.size()));
  }
  CHECK_THROWS_AS(summarize_cohort(std::vector<double>{}), ValidationError);
}

TEST_CASE("cv report: identical folds have no spread") {
  const auto f = rows_of({0.1, 0.4, 0.35, 0.8, 0.6, 0.2}, {0, 0, 1, 1, 1, 0});
  const auto ev = cv_report({f, f, f}, grid(), 0.45);
  REQUIRE(ev.folds.size() == 3);
  CHECK(ev.auc_sd == 0.0);
  for (const auto& b : ev.sweep) {
    CHECK(b.sensitivity_sd == 0.0);
    CHECK(b.specificity_sd == 0.0);
  }
  for (double sd : ev.roc_tpr_sd) CHECK(sd == 0.0);
  CHECK_THROWS_AS(cv_report({f}, grid(), 0.45), ValidationError);
}

TEST_CASE("cv report: two hand-set folds") {
  const auto a = rows_of({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});  // auc 0.75
  const auto b = rows_of({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});   // auc 1
  const std::vector<double> th = {0.3, 0.5};
  const auto ev = cv_report({a, b}, th, 0.45);
  CHECK(ev.auc == doctest::Approx(0.875));
  CHECK(ev.auc_sd == doctest::Approx(std::sqrt(2 * 0.125 * 0.125)));
  // Threshold 0.5: fold a sens 0.5 spec 1, fold b sens 1 spec 1.
  CHECK(ev.sweep[1].sensitivity == doctest::Approx(0.75));
  CHECK(ev.sweep[1].sensitivity_sd == doctest::Approx(std::sqrt(0.125)));
  CHECK(ev.sweep[1].specificity == 1.0);
  CHECK(ev.rows.size() == 8);
}

TEST_CASE("evaluate_rows groups by fold") {
  auto a = rows_of({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
  auto b = rows_of({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
  for (auto& r : a) r.fold = 1;
  for (auto& r : b) r.fold = 0;
  std::vector<ScoredRow> all(a.begin(), a.end());
  all.insert(all.end(), b.begin(), b.end());
  const auto ev = evaluate_rows(all, grid(), 0.45);
  REQUIRE(ev.folds.size() == 2);
  CHECK(ev.folds[0].fold == 0);
  CHECK(ev.folds[0].auc == 1.0);
  CHECK(ev.folds[1].auc == 0.75);

  const auto single = evaluate_rows(rows_of({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}), grid(), 0.45);
  CHECK(single.folds.empty());
  CHECK(single.auc == 0.75);
  CHECK(std::isnan(single.auc_sd));
}

TEST_CASE("metrics csv parses back to the aggregate") {
  std::mt19937_64 rng(8);
  std::vector<std::vector<ScoredRow>> folds;
  for (int k = 0; k < 3; ++k) folds.push_back(random_rows(rng, 20, 50));
  const auto ev = cv_report(folds, grid(), 0.45);
  const auto csv = metrics_csv(ev);
  const auto lines = split(csv, '\n');
  const auto header = split(lines[0], ',');
  REQUIRE(header.size() == 11);
  CHECK(header[0] == "section");
  std::size_t agg = 0, fold_rows = 0;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto c = split(lines[i], ',');
    REQUIRE(c.size() == 11);
    if (c[0] == "aggregate") {
      const auto& b = ev.sweep[agg++];
      CHECK(std::stod(c[2]) == ev.auc);
      CHECK(std::stod(c[3]) == b.threshold);
      CHECK(std::stod(c[4]) == b.sensitivity);
      CHECK(std::stod(c[5]) == b.specificity);
      CHECK(std::stod(c[6]) == b.accuracy);
      CHECK(std::stod(c[7]) == ev.auc_sd);
      CHECK(std::stod(c[8]) == b.sensitivity_sd);
    } else {
      CHECK(c[0] == "fold");
      const int f = std::stoi(c[1]);
      const auto& p = ev.folds[f].sweep[fold_rows % ev.thresholds.size()];
      CHECK(std::stod(c[2]) == ev.folds[f].auc);
      CHECK(std::stod(c[4]) == p.sensitivity);
      ++fold_rows;
    }
  }
  CHECK(agg == ev.sweep.size());
  CHECK(fold_rows == 3 * ev.thresholds.size());
}

TEST_CASE("report files are deterministic") {
  std::mt19937_64 rng(9);
  std::vector<std::vector<ScoredRow>> folds;
  for (int k = 0; k < 2; ++k) folds.push_back(random_rows(rng, 16, 30));
  const auto ev = cv_report(folds, grid(), 0.45);
  const auto d1 = kstest::scratch("report1"), d2 = kstest::scratch("report2");
  render_report(ev, d1);
  render_report(cv_report(folds, grid(), 0.45), d2);
  for (const char* f : {"metrics.csv", "roc.svg", "sens_spec.svg", "scatter.svg", "summary.json"})
    CHECK(read_file(d1 / f) == read_file(d2 / f));
  const auto scatter = read_file(d1 / "scatter.svg");
  CHECK(scatter.find("stroke-dasharray") != std::string::npos);
  CHECK(std::count(scatter.begin(), scatter.end(), 'c') > 0);

  auto empty = ev;
  empty.thresholds.clear();
  CHECK_THROWS_AS(render_report(empty, d1), ValidationError);
  CHECK_THROWS_AS(render_report(ev, d1 / "metrics.csv" / "sub"), IoError);
}

TEST_CASE("roc interpolation") {
  RocCurve c;
  c.fpr = {0.0, 0.0, 0.5, 1.0};
  c.tpr = {0.0, 0.6, 0.8, 1.0};
  CHECK(roc_interpolate(c, 0.0) == 0.6);
  CHECK(roc_interpolate(c, 0.25) == doctest::Approx(0.7));
  CHECK(roc_interpolate(c, 1.0) == 1.0);
}

}  // TEST_SUITE
