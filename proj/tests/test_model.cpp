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
#include "helpers.hpp"
#include "model.hpp"
#include "risk.hpp"
#include "text.hpp"

using namespace koopscore;

namespace {

// Label-correlated feature cohort; `margin` scales the class separation.
std::vector<StudyFeatures> feature_cohort(int n, std::uint64_t seed, double margin) {
  std::mt19937_64 rng(seed);
  std::vector<StudyFeatures> out;
  for (int i = 0; i < n; ++i) {
    StudyFeatures s;
    s.patient_id = patient_name(i);
    s.label = i % 2;
    s.clinical = {std::clamp(60.0 - margin * 15.0 * s.label + 5 * standard_normal(rng), 5.0, 95.0),
                  50.0 + 3 * standard_normal(rng), std::max(20.0, 65.0 + margin * 8 * s.label + 10 * standard_normal(rng)),
                  uniform01(rng) < 0.5 ? 0 : 1};
    const int k = 2 + static_cast<int>(uniform01(rng) * 3);
    for (int j = 0; j < k; ++j) {
      ModeFeatures m;
      m.re_mu = -0.3 + 0.2 * standard_normal(rng);
      m.im_mu = j == 0 ? 7.5 : 0.0;
      m.modulus = std::exp(m.re_mu * 0.02);
      m.h1 = 3.0 + 0.5 * standard_normal(rng);
      m.p_irr = j == 0 ? 35.0 : 0.1;
      m.energy = 10.0 * uniform01(rng);
      m.view = kAllViews[j % kNumViews];
      s.modes.push_back(m);
    }
    if (s.label == 1) {
      ModeFeatures m;
      m.re_mu = 0.4 * margin;
      m.modulus = std::exp(m.re_mu * 0.02);
      m.h1 = 6.0;
      m.p_irr = 0.1;
      m.energy = 20.0;
      m.view = ViewLabel::kA4C;
      s.modes.push_back(m);
    }
    out.push_back(std::move(s));
  }
  return out;
}

RiskModel fresh_model(std::span<const StudyFeatures> train, std::uint64_t seed) {
  RiskModel m;
  m.dims = ModelDims{4, 5, 3};
  m.params = init_params(m.dims, seed);
  m.clinical_norm = fit_clinical_norm(train);
  m.feature_norm = fit_feature_norm(train);
  return m;
}

double bce_oracle(double v, int y) {
  v = std::min(std::max(v, 1e-7), 1.0 - 1e-7);
  return -(y * std::log(v) + (1 - y) * std::log(1 - v));
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("initialization") {
  const ModelDims dims{16, 16, 8};
  const auto p = init_params(dims, 7);
  CHECK(p.beta.isZero(0.0));
  CHECK(p.omega.isZero(0.0));
  CHECK(p.eta == 1.0);
  CHECK(p.z0 == 0.0);
  CHECK(p.mode_embed.hidden.b.isZero(0.0));
  const double a = std::sqrt(6.0 / (16 + kModeFeatureCount));
  CHECK(p.v.cwiseAbs().maxCoeff() <= a);
  CHECK(p.v.cwiseAbs().maxCoeff() > 0.5 * a);
  const double ae = std::sqrt(6.0 / (8 + 16));
  CHECK(p.mode_embed.out.w.cwiseAbs().maxCoeff() <= ae);

  RiskModel m1, m2;
  m1.params = init_params(dims, 7);
  m2.params = init_params(dims, 7);
  m1.dims = m2.dims = dims;
  m1.clinical_norm = m2.clinical_norm = {{0, 0, 0}, {1, 1, 1}};
  m1.feature_norm = m2.feature_norm = {std::vector<double>(6, 0.0), std::vector<double>(6, 1.0)};
  CHECK(encode_model(m1) == encode_model(m2));
  CHECK(init_params(dims, 8).q != p.q);
  CHECK_THROWS_AS(init_params(ModelDims{0, 1, 1}, 1), ValidationError);
}

TEST_CASE("fresh model has no clinical term") {
  const auto cohort = feature_cohort(12, 3, 1.0);
  const auto m = fresh_model(cohort, 1);
  for (const auto& s : cohort) {
    const auto sc = score_features(s, m);
    CHECK(sc.clin == 0.0);
    CHECK(sc.z == sc.dyn + sc.inter);
  }
}

TEST_CASE("normalization statistics") {
  auto cohort = feature_cohort(5, 9, 1.0);
  const double ef[5] = {40, 50, 60, 70, 80};
  for (int i = 0; i < 5; ++i) {
    cohort[i].clinical.ef = ef[i];
    cohort[i].clinical.dim = 50.0;
  }
  const auto s = fit_clinical_norm(cohort);
  CHECK(s.mean[0] == 60.0);
  CHECK(s.sd[0] == doctest::Approx(std::sqrt(250.0)));
  CHECK(s.mean[1] == 50.0);
  CHECK(s.sd[1] == 1.0);

  std::vector<StudyFeatures> empty_modes(2);
  const auto f = fit_feature_norm(empty_modes);
  CHECK(f.mean == std::vector<double>(6, 0.0));
  CHECK(f.sd == std::vector<double>(6, 1.0));
}

TEST_CASE("center offset is the median training z") {
  const auto cohort = feature_cohort(9, 4, 1.0);
  auto m = fresh_model(cohort, 2);
  std::vector<double> z;
  for (const auto& s : cohort) z.push_back(score_features(s, m).z);
  std::sort(z.begin(), z.end());
  center_offset(m, cohort);
  CHECK(m.params.z0 == z[4]);
}

TEST_CASE("loss: clamp floor and maximal entropy") {
  auto cohort = feature_cohort(6, 5, 1.0);
  auto m = fresh_model(cohort, 3);
  m.params.eta = 0.0;  // every value is exactly 0.5
  CHECK(loss(m, cohort, 0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // Saturate each prediction onto its own label.
  auto sat = m;
  sat.params.eta = 1.0;
  std::vector<StudyFeatures> pos, neg;
  for (const auto& s : cohort) (s.label ? pos : neg).push_back(s);
  sat.params.z0 = -1e6;
  CHECK(loss(sat, pos, 0.0) == doctest::Approx(-std::log(1 - 1e-7)).epsilon(1e-9));
  CHECK(loss(sat, pos, 0.0) < 1.1e-7);
  sat.params.z0 = 1e6;
  CHECK(loss(sat, neg, 0.0) < 1.1e-7);
}

TEST_CASE("loss: scalar oracle") {
  auto cohort = feature_cohort(10, 6, 1.0);
  auto m = fresh_model(cohort, 4);
  m.params.beta << 0.3, -0.2, 0.1, 0.4;
  center_offset(m, cohort);
  const double l2 = 1e-3;
  long double acc = 0.0L;
  for (const auto& s : cohort) acc += bce_oracle(score_features(s, m).value, s.label);
  double pen = 0.0;
  for (const auto& g : m.params.groups())
    if (g.penalized)
      for (long i = 0; i < g.size; ++i) pen += g.data[i] * g.data[i];
  const double oracle = static_cast<double>(acc / cohort.size()) + l2 * pen;
  CHECK(std::abs(loss(m, cohort, l2) - oracle) < 1e-12);

  cohort[3].label = 2;
  CHECK_THROWS_AS(loss(m, cohort, 0.0), ValidationError);
  CHECK_THROWS_AS(loss(m, std::vector<StudyFeatures>{}, 0.0), ValidationError);
}

TEST_CASE("gradient: beta at zero on symmetric data") {
  auto cohort = feature_cohort(8, 7, 1.0);
  auto m = fresh_model(cohort, 5);
  center_offset(m, cohort);
  const auto lg = gradients(m, cohort, 0.0);
  for (int j = 0; j < 4; ++j) {
    auto plus = m, minus = m;
    plus.params.beta(j) += 1e-4;
    minus.params.beta(j) -= 1e-4;
    const double fd = (loss(plus, cohort, 0.0) - loss(minus, cohort, 0.0)) / 2e-4;
    CHECK(std::abs(lg.grad.beta(j) - fd) <= 1e-6 * std::max(std::abs(fd), 1e-3));
  }
}

TEST_CASE("gradient: every parameter against central differences") {
  auto cohort = feature_cohort(8, 8, 1.0);
  auto m = fresh_model(cohort, 6);
  std::mt19937_64 rng(1);
  for (int j = 0; j < 4; ++j) m.params.beta(j) = 0.2 * standard_normal(rng);
  for (int j = 0; j < 4; ++j)
    for (int k = 0; k <= j; ++k) m.params.omega(j, k) = m.params.omega(k, j) = 0.05 * standard_normal(rng);
  m.params.mode_embed.hidden.b.setConstant(0.1);
  m.params.clinical_embed.out.b.setConstant(-0.2);
  m.params.eta = 0.7;
  center_offset(m, cohort);
  m.params.z0 += 0.3;
  const double l2 = 1e-3;
  const auto lg = gradients(m, cohort, l2);
  CHECK(lg.loss == doctest::Approx(loss(m, cohort, l2)).epsilon(1e-14));

  auto probe = m;
  auto pg = probe.params.groups();
  const auto ag = lg.grad.groups();
  double worst = 0.0;
  for (std::size_t g = 0; g < pg.size(); ++g) {
    for (long i = 0; i < pg[g].size; ++i) {
      const double keep = pg[g].data[i];
      pg[g].data[i] = keep + 1e-4;
      const double up = loss(probe, cohort, l2);
      pg[g].data[i] = keep - 1e-4;
      const double down = loss(probe, cohort, l2);
      pg[g].data[i] = keep;
      const double fd = (up - down) / 2e-4;
      const double a = ag[g].second[i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-6});
      worst = std::max(worst, rel);
      if (rel >= 1e-4) FAIL_CHECK(pg[g].name << "[" << i << "] analytic " << a << " fd " << fd);
    }
  }
  MESSAGE("worst relative gradient error " << worst);
}

TEST_CASE("gradient: eta sign when every prediction is on the correct side") {
  const auto all = feature_cohort(40, 9, 1.0);
  auto m = fresh_model(all, 7);
  m.params.beta << -3.0, 0.0, 0.0, 0.0;
  center_offset(m, all);
  // Keep only the patients the model already places on the correct side.
  std::vector<StudyFeatures> cohort;
  for (const auto& s : all)
    if ((score_features(s, m).z > m.params.z0) == (s.label == 1)) cohort.push_back(s);
  REQUIRE(std::count_if(cohort.begin(), cohort.end(), [](const auto& s) { return s.label == 1; }) >= 3);
  REQUIRE(std::count_if(cohort.begin(), cohort.end(), [](const auto& s) { return s.label == 0; }) >= 3);
  const auto lg = gradients(m, cohort, 0.0);
  CHECK(lg.grad.eta < 0.0);
  auto bigger = m;
  bigger.params.eta *= 1.1;
  CHECK(loss(bigger, cohort, 0.0) < loss(m, cohort, 0.0));
}

TEST_CASE("gradient is zero through a clamped prediction") {
  auto cohort = feature_cohort(2, 10, 1.0);
  auto m = fresh_model(cohort, 8);
  m.params.z0 = -1e6;
  const auto lg = gradients(m, std::span<const StudyFeatures>(cohort).subspan(1, 1), 0.0);
  REQUIRE(cohort[1].label == 1);
  CHECK(lg.grad.penalty_norm() == 0.0);
  CHECK(lg.grad.eta == 0.0);
}

TEST_CASE("training separates a separable cohort") {
  const auto cohort = feature_cohort(80, 11, 2.0);
  auto m = fresh_model(cohort, 9);
  center_offset(m, cohort);
  TrainConfig cfg;
  cfg.epochs = 200;
  const auto res = train(m, cohort, cfg);
  REQUIRE(res.history.size() == 200);
  CHECK(res.history.back().train_loss < 0.3);
  CHECK(res.history.back().train_loss < res.history.front().train_loss);
  CHECK((res.model.params.omega - res.model.params.omega.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(res.model.params.eta >= kMinEta);
  CHECK(res.updated_ids.size() == 80);

  const auto again = train(m, cohort, cfg);
  CHECK(encode_model(again.model) == encode_model(res.model));
}

TEST_CASE("omega stays symmetric after every update") {
  const auto cohort = feature_cohort(20, 12, 1.0);
  auto m = fresh_model(cohort, 10);
  center_offset(m, cohort);
  TrainConfig cfg;
  cfg.batch_size = 3;
  for (int e = 1; e <= 5; ++e) {
    cfg.epochs = e;
    const auto r = train(m, cohort, cfg);
    CHECK(r.model.params.omega == r.model.params.omega.transpose());
    CHECK(r.model.params.omega.cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("zero learning rate leaves the model unchanged") {
  const auto cohort = feature_cohort(16, 13, 1.0);
  auto m = fresh_model(cohort, 11);
  center_offset(m, cohort);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.epochs = 4;
  const auto r = train(m, cohort, cfg);
  CHECK(encode_model(r.model) == encode_model(m));
  for (const auto& h : r.history) CHECK(h.train_loss == r.history.front().train_loss);
}

TEST_CASE("early stopping returns the best validation state") {
  const auto all = feature_cohort(60, 14, 0.5);
  const std::vector<StudyFeatures> tr(all.begin(), all.begin() + 40), val(all.begin() + 40, all.end());
  auto m = fresh_model(tr, 12);
  center_offset(m, tr);
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.patience = 5;
  const auto r = train(m, tr, cfg, val);
  double best = INFINITY;
  int best_epoch = 0;
  for (const auto& h : r.history) {
    if (h.val_loss < best) {
      best = h.val_loss;
      best_epoch = h.epoch;
    }
    CHECK(h.best_loss == doctest::Approx(std::min(best, h.best_loss)));
  }
  CHECK(r.best_epoch == best_epoch);
  CHECK(loss(r.model, val, 0.0) == doctest::Approx(best).epsilon(1e-14));
  if (static_cast<int>(r.history.size()) < cfg.epochs) CHECK(r.history.size() - best_epoch == 5);
}

TEST_CASE("training rejects a single-class cohort and bad configs") {
  auto cohort = feature_cohort(6, 15, 1.0);
  for (auto& s : cohort) s.label = 0;
  auto m = fresh_model(cohort, 13);
  CHECK_THROWS_AS(train(m, cohort, TrainConfig{}), ValidationError);
  TrainConfig bad;
  bad.epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
  bad = TrainConfig{};
  bad.l2_penalty = -1.0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("k-fold split") {
  const std::vector<int> ten = {1, 0, 1, 0, 1, 0, 1, 0, 1, 0};
  const auto f = kfold_split(ten, 5, 7);
  for (int k = 0; k < 5; ++k) {
    int pos = 0, neg = 0;
    for (std::size_t i = 0; i < 10; ++i)
      if (f[i] == k) (ten[i] ? pos : neg)++;
    CHECK(pos == 1);
    CHECK(neg == 1);
  }
  CHECK(kfold_split(ten, 5, 7) == f);
  CHECK(kfold_split(ten, 5, 8) != f);

  std::vector<int> labels(736);
  for (int i = 0; i < 736; ++i) labels[i] = i < 368 ? 1 : 0;
  const auto g = kfold_split(labels, 5, 7);
  std::vector<int> sizes(5, 0), pos(5, 0);
  for (int i = 0; i < 736; ++i) {
    ++sizes[g[i]];
    pos[g[i]] += labels[i];
  }
  std::sort(sizes.begin(), sizes.end(), std::greater<>());
  CHECK(sizes == std::vector<int>{148, 147, 147, 147, 147});
  CHECK(*std::max_element(pos.begin(), pos.end()) - *std::min_element(pos.begin(), pos.end()) <= 1);

  CHECK_THROWS_AS(kfold_split(std::vector<int>{0, 1}, 3, 1), ValidationError);
  CHECK_THROWS_AS(kfold_split(std::vector<int>{0, 2, 1}, 2, 1), ValidationError);
}

TEST_CASE("model file round-trip") {
  const auto cohort = feature_cohort(10, 16, 1.0);
  auto m = fresh_model(cohort, 14);
  m.params.beta << 0.1, 0.2, 0.3, 0.4;
  m.params.z0 = 0.25;
  Dictionary d;
  d.height = 2;
  d.width = 3;
  d.rank = 2;
  d.mean = Vector::LinSpaced(6, 0.0, 0.5);
  d.components = Matrix::Random(2, 6);
  m.dictionaries.emplace(ViewLabel::kA2C, d);
  m.filter = {0.01, 0.2, 5};

  const std::string bytes = encode_model(m);
  CHECK(bytes.substr(0, 4) == "KRM1");
  const auto back = decode_model(bytes);
  CHECK(encode_model(back) == bytes);
  CHECK(back.filter.k_max == 5);
  CHECK(back.dictionaries.at(ViewLabel::kA2C).components == d.components);
  for (const auto& s : cohort) CHECK(to_json(score_features(s, back)).dump() == to_json(score_features(s, m)).dump());

  const auto dir = kstest::scratch("model_file");
  save_model(m, dir / "m.krm");
  CHECK(read_file(dir / "m.krm") == bytes);
  CHECK(encode_model(load_model(dir / "m.krm")) == bytes);

  const auto header = describe_model(m);
  CHECK(header["version"] == kModelFormatVersion);
  CHECK(header["dims"]["mode_features"] == kModeFeatureCount);
  CHECK(header["blocks"][0]["name"] == "beta");
}

TEST_CASE("model file errors") {
  const auto cohort = feature_cohort(4, 17, 1.0);
  const std::string bytes = encode_model(fresh_model(cohort, 1));
  std::string bad = bytes;
  bad[1] = 'X';
  CHECK_THROWS_AS(decode_model(bad), FormatError);
  CHECK_THROWS_AS(decode_model(bytes.substr(0, bytes.size() - 8)), FormatError);
  CHECK_THROWS_AS(decode_model(bytes + "\x01"), FormatError);

  std::string future = bytes;
  const auto pos = future.find("\"version\":1");
  REQUIRE(pos != std::string::npos);
  future.replace(pos, 11, "\"version\":2");
  CHECK_THROWS_AS(decode_model(future), IncompatibleError);
  CHECK_THROWS_AS(load_model(kstest::scratch("model_missing") / "none.krm"), IoError);
}

}  // TEST_SUITE
