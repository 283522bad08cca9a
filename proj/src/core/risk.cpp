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

#include "risk.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"

namespace koopscore {

// --- Functionals --------------------------------------------------------------

double sobolev_h1(std::span<const double> f, int height, int width, double dy, double dx) {
  require(height >= 2 && width >= 2, "sobolev_h1: grid must be at least 2x2");
  require(static_cast<long>(f.size()) == static_cast<long>(height) * width, "sobolev_h1: field size mismatch");
  require(dy > 0.0 && dx > 0.0, "sobolev_h1: spacing must be positive");
  double l2 = 0.0, gx = 0.0, gy = 0.0;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double v = f[static_cast<std::size_t>(y) * width + x];
      l2 += v * v;
      if (x + 1 < width) {
        const double d = (f[static_cast<std::size_t>(y) * width + x + 1] - v) / dx;
        gx += d * d;
      }
      if (y + 1 < height) {
        const double d = (f[static_cast<std::size_t>(y + 1) * width + x] - v) / dy;
        gy += d * d;
      }
    }
  }
  return std::sqrt(dy * dx * (l2 + gx + gy));
}

double temporal_irregularity(std::span<const Complex> trace, double dt) {
  require(trace.size() >= 2, "temporal_irregularity: trace needs at least 2 samples");
  require(dt > 0.0, "temporal_irregularity: dt must be positive");
  double acc = 0.0;
  for (std::size_t t = 0; t + 1 < trace.size(); ++t) acc += std::norm(trace[t + 1] - trace[t]);
  return acc / dt;
}

std::array<double, kModeFeatureCount> ModeFeatures::as_array() const {
  std::array<double, kModeFeatureCount> out{re_mu, im_mu, modulus, h1, p_irr, energy};
  out[kContinuousFeatures + static_cast<int>(view)] = 1.0;
  return out;
}

ModeFeatures mode_features(const KoopmanMode& mode, const KoopmanDecomposition& dec) {
  ModeFeatures mf;
  mf.re_mu = mode.mu.real();
  mf.im_mu = mode.mu.imag();
  mf.modulus = std::abs(mode.lambda);
  mf.h1 = sobolev_h1(std::span<const double>(mode.mode_field.data(), mode.mode_field.size()), dec.height, dec.width);
  mf.p_irr = temporal_irregularity(std::span<const Complex>(mode.phi_trace.data(), mode.phi_trace.size()), dec.dt);
  mf.energy = mode.energy;
  mf.view = dec.view;
  return mf;
}

double dyn_risk(const ModeFeatures& mf) { return mf.re_mu * mf.h1 + mf.p_irr; }

std::vector<ModeFeatures> pool_features(const std::map<ViewLabel, KoopmanDecomposition>& decs) {
  std::vector<ModeFeatures> out;
  for (const auto& [view, dec] : decs) {
    for (const auto& m : dec.modes) out.push_back(mode_features(m, dec));
  }
  return out;
}

// --- Parameters ---------------------------------------------------------------

namespace {

template <typename P, typename Emit>
void visit_groups(P& p, Emit&& emit) {
  emit("beta", p.beta.data(), p.beta.size(), true);
  emit("omega", p.omega.data(), p.omega.size(), true);
  emit("q", p.q.data(), p.q.size(), true);
  emit("v", p.v.data(), p.v.size(), true);
  emit("mode_embed.hidden.w", p.mode_embed.hidden.w.data(), p.mode_embed.hidden.w.size(), true);
  emit("mode_embed.hidden.b", p.mode_embed.hidden.b.data(), p.mode_embed.hidden.b.size(), true);
  emit("mode_embed.out.w", p.mode_embed.out.w.data(), p.mode_embed.out.w.size(), true);
  emit("mode_embed.out.b", p.mode_embed.out.b.data(), p.mode_embed.out.b.size(), true);
  emit("clinical_embed.hidden.w", p.clinical_embed.hidden.w.data(), p.clinical_embed.hidden.w.size(), true);
  emit("clinical_embed.hidden.b", p.clinical_embed.hidden.b.data(), p.clinical_embed.hidden.b.size(), true);
  emit("clinical_embed.out.w", p.clinical_embed.out.w.data(), p.clinical_embed.out.w.size(), true);
  emit("clinical_embed.out.b", p.clinical_embed.out.b.data(), p.clinical_embed.out.b.size(), true);
  emit("eta", &p.eta, 1, false);
  emit("z0", &p.z0, 1, false);
}

DenseLayer zero_layer(int out, int in) { return DenseLayer{Matrix::Zero(out, in), Vector::Zero(out)}; }

}  // namespace

std::vector<RiskParams::Group> RiskParams::groups() {
  std::vector<Group> out;
  visit_groups(*this, [&](const char* name, double* d, long n, bool pen) { out.push_back({name, d, n, pen}); });
  return out;
}

std::vector<std::pair<std::string, std::span<const double>>> RiskParams::groups() const {
  std::vector<std::pair<std::string, std::span<const double>>> out;
  visit_groups(*this, [&](const char* name, const double* d, long n, bool) {
    out.emplace_back(name, std::span<const double>(d, static_cast<std::size_t>(n)));
  });
  return out;
}

RiskParams RiskParams::zeros(const ModelDims& dims) {
  RiskParams p;
  p.beta = Vector::Zero(4);
  p.omega = Matrix::Zero(4, 4);
  p.q = Vector::Zero(dims.attention_hidden);
  p.v = Matrix::Zero(dims.attention_hidden, kModeFeatureCount);
  p.mode_embed = {zero_layer(dims.embed_hidden, kModeFeatureCount), zero_layer(dims.latent, dims.embed_hidden)};
  p.clinical_embed = {zero_layer(dims.embed_hidden, 4), zero_layer(dims.latent, dims.embed_hidden)};
  p.eta = 0.0;
  p.z0 = 0.0;
  return p;
}

void RiskParams::axpy(double alpha, const RiskParams& other) {
  auto mine = groups();
  const auto theirs = other.groups();
  require(mine.size() == theirs.size(), "RiskParams::axpy: shape mismatch");
  for (std::size_t g = 0; g < mine.size(); ++g) {
    require(static_cast<std::size_t>(mine[g].size) == theirs[g].second.size(), "RiskParams::axpy: shape mismatch");
    for (long i = 0; i < mine[g].size; ++i) mine[g].data[i] += alpha * theirs[g].second[i];
  }
}

double RiskParams::penalty_norm() const {
  double acc = 0.0;
  visit_groups(*this, [&](const char*, const double* d, long n, bool pen) {
    if (!pen) return;
    for (long i = 0; i < n; ++i) acc += d[i] * d[i];
  });
  return acc;
}

void RiskParams::symmetrize_omega() { omega = (0.5 * (omega + omega.transpose())).eval(); }

// --- Scoring ------------------------------------------------------------------

Vector normalized_clinical(const ClinicalRecord& p, const RiskModel& model) {
  const auto raw = p.as_array();
  Vector out(4);
  for (int j = 0; j < 3; ++j) out(j) = (raw[j] - model.clinical_norm.mean.at(j)) / model.clinical_norm.sd.at(j);
  out(3) = raw[3];
  return out;
}

Vector normalized_features(const ModeFeatures& mf, const RiskModel& model) {
  const auto raw = mf.as_array();
  Vector out(kModeFeatureCount);
  for (int j = 0; j < kContinuousFeatures; ++j)
    out(j) = (raw[j] - model.feature_norm.mean.at(j)) / model.feature_norm.sd.at(j);
  for (int j = kContinuousFeatures; j < kModeFeatureCount; ++j) out(j) = raw[j];
  return out;
}

double swish(double x) { return x / (1.0 + std::exp(-x)); }

double swish_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s + x * s * (1.0 - s);
}

double calibrate(double z, double eta, double z0) {
  const double a = eta * (z - z0);
  if (a >= 0.0) return 1.0 / (1.0 + std::exp(-a));
  const double e = std::exp(a);
  return e / (1.0 + e);
}

std::vector<double> softmax(const std::vector<double>& s) {
  if (s.empty()) return {};
  const double mx = *std::max_element(s.begin(), s.end());
  std::vector<double> w(s.size());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) total += (w[i] = std::exp(s[i] - mx));
  for (double& x : w) x /= total;
  return w;
}

namespace {

struct EmbedPass {
  Vector u1, h, u2, e;
};

EmbedPass embed_forward(const Embedder& em, const Vector& x) {
  EmbedPass p;
  p.u1 = em.hidden.w * x + em.hidden.b;
  p.h = p.u1.unaryExpr([](double v) { return swish(v); });
  p.u2 = em.out.w * p.h + em.out.b;
  p.e = p.u2.unaryExpr([](double v) { return swish(v); });
  return p;
}

void embed_backward(const Embedder& em, const EmbedPass& p, const Vector& x, const Vector& de, Embedder& g) {
  const Vector du2 = de.cwiseProduct(p.u2.unaryExpr([](double v) { return swish_grad(v); }));
  g.out.w.noalias() += du2 * p.h.transpose();
  g.out.b += du2;
  const Vector dh = em.out.w.transpose() * du2;
  const Vector du1 = dh.cwiseProduct(p.u1.unaryExpr([](double v) { return swish_grad(v); }));
  g.hidden.w.noalias() += du1 * x.transpose();
  g.hidden.b += du1;
}

struct ModePass {
  Vector x;  // normalized features
  Vector u;  // V x
  Vector a;  // swish(u)
  double s = 0.0;
  double dyn = 0.0;
  EmbedPass embed;
  Vector diff;
  double dist = 0.0;
};

struct ScorePass {
  Vector p_hat;
  EmbedPass clinical;
  std::vector<ModePass> modes;
  std::vector<double> weights;
  AcousticScore score;
};

ScorePass forward(const StudyFeatures& study, const RiskModel& model) {
  const RiskParams& prm = model.params;
  ScorePass pass;
  pass.p_hat = normalized_clinical(study.clinical, model);
  pass.clinical = embed_forward(prm.clinical_embed, pass.p_hat);

  std::vector<double> scores;
  for (const auto& mf : study.modes) {
    ModePass mp;
    mp.x = normalized_features(mf, model);
    mp.u = prm.v * mp.x;
    mp.a = mp.u.unaryExpr([](double v) { return swish(v); });
    mp.s = prm.q.dot(mp.a);
    mp.dyn = dyn_risk(mf);
    mp.embed = embed_forward(prm.mode_embed, mp.x);
    mp.diff = mp.embed.e - pass.clinical.e;
    mp.dist = mp.diff.norm();
    scores.push_back(mp.s);
    pass.modes.push_back(std::move(mp));
  }
  pass.weights = softmax(scores);

  AcousticScore& sc = pass.score;
  sc.patient_id = study.patient_id;
  sc.degenerate = study.modes.empty();
  for (std::size_t i = 0; i < study.modes.size(); ++i) {
    sc.dyn += pass.weights[i] * pass.modes[i].dyn;
    sc.inter += study.modes[i].re_mu * pass.modes[i].dist;
    sc.modes.push_back({pass.weights[i], pass.modes[i].dyn, pass.modes[i].dist});
  }
  sc.clin = prm.beta.dot(pass.p_hat) + pass.p_hat.dot(prm.omega * pass.p_hat);
  sc.z = sc.dyn + sc.clin + sc.inter;
  sc.value = calibrate(sc.z, prm.eta, prm.z0);
  return pass;
}

}  // namespace

std::vector<double> attention_weights(std::span<const ModeFeatures> features, const RiskModel& model) {
  std::vector<double> s;
  s.reserve(features.size());
  for (const auto& mf : features) {
    const Vector a = (model.params.v * normalized_features(mf, model)).unaryExpr([](double v) { return swish(v); });
    s.push_back(model.params.q.dot(a));
  }
  return softmax(s);
}

double clinical_risk(const ClinicalRecord& p, const RiskModel& model) {
  const Vector ph = normalized_clinical(p, model);
  return model.params.beta.dot(ph) + ph.dot(model.params.omega * ph);
}

double interaction(std::span<const ModeFeatures> features, const ClinicalRecord& p, const RiskModel& model) {
  if (features.empty()) return 0.0;
  const Vector ec = embed(model.params.clinical_embed, normalized_clinical(p, model));
  double acc = 0.0;
  for (const auto& mf : features) {
    acc += mf.re_mu * (embed(model.params.mode_embed, normalized_features(mf, model)) - ec).norm();
  }
  return acc;
}

Vector embed(const Embedder& e, const Vector& x) { return embed_forward(e, x).e; }

AcousticScore score_features(const StudyFeatures& study, const RiskModel& model) {
  return forward(study, model).score;
}

AcousticScore acoustic_index(const Study& study, const RiskModel& model,
                             const std::map<ViewLabel, KoopmanDecomposition>& decs) {
  if (!study.clinical) throw ValidationError("acoustic_index: study " + study.patient_id + " has no clinical record");
  study.clinical->validate();
  StudyFeatures sf;
  sf.patient_id = study.patient_id;
  sf.modes = pool_features(decs);
  sf.clinical = *study.clinical;
  sf.label = study.label.value_or(-1);
  return score_features(sf, model);
}

AcousticScore backprop_score(const StudyFeatures& study, const RiskModel& model, double dloss_dvalue,
                             RiskParams& grad) {
  const RiskParams& prm = model.params;
  ScorePass pass = forward(study, model);
  const AcousticScore& sc = pass.score;
  const double v = sc.value;
  const double slope = v * (1.0 - v);

  grad.eta += dloss_dvalue * slope * (sc.z - prm.z0);
  grad.z0 -= dloss_dvalue * slope * prm.eta;
  const double gz = dloss_dvalue * slope * prm.eta;
  if (gz == 0.0) return sc;

  grad.beta += gz * pass.p_hat;
  grad.omega.noalias() += gz * pass.p_hat * pass.p_hat.transpose();

  Vector dclin = Vector::Zero(pass.clinical.e.size());
  for (std::size_t i = 0; i < pass.modes.size(); ++i) {
    const ModePass& mp = pass.modes[i];
    const double ds = gz * pass.weights[i] * (mp.dyn - sc.dyn);
    grad.q += ds * mp.a;
    const Vector du = (ds * prm.q).cwiseProduct(mp.u.unaryExpr([](double x) { return swish_grad(x); }));
    grad.v.noalias() += du * mp.x.transpose();

    if (mp.dist > 0.0) {
      const Vector de = (gz * study.modes[i].re_mu / mp.dist) * mp.diff;
      embed_backward(prm.mode_embed, mp.embed, mp.x, de, grad.mode_embed);
      dclin -= de;
    }
  }
  embed_backward(prm.clinical_embed, pass.clinical, pass.p_hat, dclin, grad.clinical_embed);
  return sc;
}

nlohmann::ordered_json to_json(const AcousticScore& s) {
  nlohmann::ordered_json j;
  j["patient_id"] = s.patient_id;
  j["value"] = s.value;
  j["z"] = s.z;
  j["dyn"] = s.dyn;
  j["clin"] = s.clin;
  j["inter"] = s.inter;
  j["degenerate"] = s.degenerate;
  auto modes = nlohmann::ordered_json::array();
  for (const auto& m : s.modes) {
    nlohmann::ordered_json jm;
    jm["weight"] = m.weight;
    jm["dyn"] = m.dyn;
    jm["dist"] = m.dist;
    modes.push_back(std::move(jm));
  }
  j["modes"] = std::move(modes);
  return j;
}

}  // namespace koopscore
