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

#pragma once

#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dictionary.hpp"
#include "edmd.hpp"
#include "json.hpp"
#include "linalg.hpp"
#include "sequence.hpp"

namespace koopscore {

// --- Per-mode functionals ------------------------------------------------------

/// sqrt(|f|^2_L2 + |grad f|^2_L2) with forward differences and cell area dy*dx.
double sobolev_h1(std::span<const double> field, int height, int width, double dy = 1.0, double dx = 1.0);

/// sum_t |phi(t+1) - phi(t)|^2 / dt.
double temporal_irregularity(std::span<const Complex> trace, double dt);

inline constexpr int kContinuousFeatures = 6;
inline constexpr int kModeFeatureCount = kContinuousFeatures + kNumViews;

struct ModeFeatures {
  double re_mu = 0.0;
  double im_mu = 0.0;
  double modulus = 0.0;
  double h1 = 0.0;
  double p_irr = 0.0;
  double energy = 0.0;
  ViewLabel view = ViewLabel::kPLAX;

  /// [re_mu, im_mu, modulus, h1, p_irr, energy, one-hot(view)].
  std::array<double, kModeFeatureCount> as_array() const;
};

ModeFeatures mode_features(const KoopmanMode& mode, const KoopmanDecomposition& dec);

/// re_mu * h1 + p_irr.
double dyn_risk(const ModeFeatures& mf);

/// Features of every retained mode, pooled across views in view order.
std::vector<ModeFeatures> pool_features(const std::map<ViewLabel, KoopmanDecomposition>& decs);

struct StudyFeatures {
  std::string patient_id;
  std::vector<ModeFeatures> modes;
  ClinicalRecord clinical;
  int label = -1;  // -1 when unknown
};

// --- Model --------------------------------------------------------------------

/// y = swish(w x + b)
struct DenseLayer {
  Matrix w;
  Vector b;
};

struct Embedder {
  DenseLayer hidden;
  DenseLayer out;
};

struct ModelDims {
  int attention_hidden = 16;
  int embed_hidden = 16;
  int latent = 8;
};

/// Trainable parameters; also the shape of their gradient.
struct RiskParams {
  Vector beta;   // 4
  Matrix omega;  // 4 x 4, symmetric
  Vector q;      // h
  Matrix v;      // h x kModeFeatureCount
  Embedder mode_embed;
  Embedder clinical_embed;
  double eta = 1.0;
  double z0 = 0.0;

  struct Group {
    std::string name;
    double* data;
    long size;
    bool penalized;
  };
  /// Every parameter block in storage order (the model file order).
  std::vector<Group> groups();
  std::vector<std::pair<std::string, std::span<const double>>> groups() const;

  static RiskParams zeros(const ModelDims& dims);
  void axpy(double alpha, const RiskParams& other);
  /// Sum of squares over penalized blocks (all but eta and z0).
  double penalty_norm() const;
  void symmetrize_omega();
};

struct Standardization {
  std::vector<double> mean;
  std::vector<double> sd;
};

struct SequenceConfig {
  EnhanceConfig enhance;
  int t_target = 32;
};

struct RiskModel {
  ModelDims dims;
  RiskParams params;
  /// ef, dim, age standardized; sex passed through.
  Standardization clinical_norm;
  /// The six continuous mode features standardized; view flags passed through.
  Standardization feature_norm;
  std::map<ViewLabel, Dictionary> dictionaries;
  DictConfig dict_config;
  FilterConfig filter;
  double rcond = 1e-10;
  SequenceConfig sequence;
};

Vector normalized_clinical(const ClinicalRecord& p, const RiskModel& model);
Vector normalized_features(const ModeFeatures& mf, const RiskModel& model);

double swish(double x);
double swish_grad(double x);
Vector embed(const Embedder& e, const Vector& x);

/// Max-shifted softmax; empty in, empty out.
std::vector<double> softmax(const std::vector<double>& scores);

std::vector<double> attention_weights(std::span<const ModeFeatures> features, const RiskModel& model);
double clinical_risk(const ClinicalRecord& p, const RiskModel& model);
double interaction(std::span<const ModeFeatures> features, const ClinicalRecord& p, const RiskModel& model);
double calibrate(double z, double eta, double z0);

struct ModeScore {
  double weight = 0.0;
  double dyn = 0.0;
  double dist = 0.0;
};

struct AcousticScore {
  std::string patient_id;
  double value = 0.0;
  double dyn = 0.0;
  double clin = 0.0;
  double inter = 0.0;
  double z = 0.0;
  bool degenerate = false;
  std::vector<ModeScore> modes;
};

AcousticScore score_features(const StudyFeatures& study, const RiskModel& model);

/// Score of a study from its per-view decompositions. The clinical record is
/// mandatory.
AcousticScore acoustic_index(const Study& study, const RiskModel& model,
                             const std::map<ViewLabel, KoopmanDecomposition>& decs);

/// Runs the score forward and accumulates dloss_dvalue * d(value)/d(params)
/// into `grad`. Returns the score.
AcousticScore backprop_score(const StudyFeatures& study, const RiskModel& model, double dloss_dvalue,
                             RiskParams& grad);

nlohmann::ordered_json to_json(const AcousticScore& score);

}  // namespace koopscore
