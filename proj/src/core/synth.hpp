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

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "linalg.hpp"
#include "sequence.hpp"

namespace koopscore {

/// One planted spatiotemporal mode. A mode with omega != 0 rotates through
/// the plane spanned by `pattern` and `quadrature`:
///   a e^{sigma t} [cos(omega t + phase) pattern + sin(omega t + phase) quadrature]
/// so both members of the conjugate pair e^{(sigma +- i omega) dt} are
/// observable by linear observables. Real modes ignore `quadrature`.
struct PlantedMode {
  double sigma = 0.0;  // 1/s
  double omega = 0.0;  // rad/s
  double amplitude = 1.0;
  double phase = 0.0;
  std::vector<double> pattern;     // H*W, unit L2 norm
  std::vector<double> quadrature;  // H*W, unit L2 norm (omega != 0)
};

/// Entry of a healthy or disease mode pool; spatial patterns are derived
/// per view from the cohort seed, so every patient shares the pool geometry.
struct ModeTemplate {
  double sigma = 0.0;
  double omega = 0.0;
  double amplitude = 1.0;
  bool sharp = false;  // sharp-edged patch instead of a smooth Gaussian bump
};

enum class DiseaseSignature { kUnstable, kSharp, kBoth };

struct ClinicalDistribution {
  double ef_mean, ef_sd;
  double dim_mean, dim_sd;
  double age_mean, age_sd;
};

struct CohortSpec {
  int n_patients = 736;
  double fraction_positive = 0.5;
  /// Fraction flagged as held-out test patients (112 of 736 by default).
  double test_fraction = 112.0 / 736.0;
  int frames = 32;
  double dt = 0.02;
  int height = 64;
  int width = 64;
  double noise_sd = 0.002;
  std::vector<ModeTemplate> healthy_pool = {
      {-0.1, 7.5, 8.0, false},  // contraction-relaxation cycle
      {-0.5, 0.0, 5.0, false},  // slow relaxation drift
  };
  ModeTemplate unstable_mode = {0.4, 0.0, 5.0, false};
  ModeTemplate sharp_mode = {-0.3, 0.0, 5.0, true};
  DiseaseSignature signature = DiseaseSignature::kUnstable;
  double omega_jitter = 0.02;      // relative, per patient
  double amplitude_jitter = 0.2;   // relative, per view
  ClinicalDistribution negative = {60.0, 7.0, 48.0, 5.0, 62.0, 17.0};
  ClinicalDistribution positive = {40.0, 10.0, 54.0, 7.0, 70.0, 15.0};
  double female_fraction = 496.0 / 736.0;
  std::uint64_t seed = 7;

  void validate() const;
};

struct OracleMode {
  double sigma = 0.0;
  double omega = 0.0;
  Complex lambda;  // e^{(sigma + i omega) dt}, upper half-plane representative
};

struct OracleRecord {
  std::string patient_id;
  double dt = 0.0;
  std::vector<OracleMode> modes;
};

struct SyntheticPatient {
  Study study;
  OracleRecord oracle;
  bool test = false;
};

/// Renders x_t = sum_j mode_j(t) + N(0, noise_sd), then min-max maps the
/// whole sequence into [0,1] (skipped for constant output).
FrameSequence render_sequence(const std::vector<PlantedMode>& modes, int frames, double dt, int height, int width,
                              double noise_sd, std::mt19937_64& rng, ViewLabel view, const std::string& patient_id,
                              bool normalize = true);

/// Same as render_sequence but without noise or normalization, in double
/// precision (test oracle for the closed-form dynamics).
std::vector<double> render_clean(const std::vector<PlantedMode>& modes, int frames, double dt, int height, int width);

std::vector<double> gaussian_bump(int height, int width, double cy, double cx, double radius);
std::vector<double> sharp_patch(int height, int width, int y0, int x0, int size);

/// Pool-derived spatial patterns for one template slot of one view.
PlantedMode pool_mode(const CohortSpec& spec, ViewLabel view, int slot, const ModeTemplate& tmpl);

SyntheticPatient gen_patient(const CohortSpec& spec, int label, std::mt19937_64& rng, const std::string& patient_id);

struct CohortPlan {
  std::vector<int> labels;
  std::vector<bool> test;
};

/// Labels (exactly round(n * fraction_positive) positives) and the
/// label-stratified held-out flags, without generating any frames.
CohortPlan plan_cohort(const CohortSpec& spec);

/// Patient `index` of a planned cohort, drawn from mix_seed(seed, index).
SyntheticPatient gen_planned_patient(const CohortSpec& spec, const CohortPlan& plan, int index);

/// n_patients studies with exactly round(n * fraction_positive) positives and
/// a label-stratified held-out flag; patient i draws from mix_seed(seed, i).
std::vector<SyntheticPatient> gen_cohort(const CohortSpec& spec);

std::vector<Complex> oracle_eigenvalues(const OracleRecord& record);
Complex planted_eigenvalue(double sigma, double omega, double dt);

/// patient_id,mode_index,sigma,omega,lambda_re,lambda_im
std::string oracle_csv(const std::vector<SyntheticPatient>& cohort);
std::string oracle_csv(std::span<const OracleRecord> records);

}  // namespace koopscore
