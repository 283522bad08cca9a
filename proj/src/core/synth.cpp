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

#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"
#include "text.hpp"

namespace koopscore {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Box-Muller pairs; halves the transcendental calls of standard_normal.
class NormalSource {
 public:
  explicit NormalSource(std::mt19937_64& rng) : rng_(rng) {}
  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01(rng_);
    while (u1 <= 0.0) u1 = uniform01(rng_);
    const double u2 = uniform01(rng_);
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(kTwoPi * u2);
    has_spare_ = true;
    return r * std::cos(kTwoPi * u2);
  }

 private:
  std::mt19937_64& rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

void normalize_l2(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

double clamp_draw(double mean, double sd, double lo, double hi, NormalSource& normal) {
  return std::clamp(mean + sd * normal.next(), lo, hi);
}

}  // namespace

void CohortSpec::validate() const {
  require(n_patients >= 1, "cohort: n_patients must be >= 1");
  require(fraction_positive > 0.0 && fraction_positive < 1.0, "cohort: fraction_positive must lie in (0,1)");
  require(test_fraction >= 0.0 && test_fraction < 1.0, "cohort: test_fraction must lie in [0,1)");
  require(frames >= 2, "cohort: frames must be >= 2");
  require(dt > 0.0, "cohort: dt must be positive");
  require(height >= 2 && width >= 2, "cohort: resolution must be at least 2x2");
  require(noise_sd >= 0.0, "cohort: noise_sd must be >= 0");
  for (const auto& m : healthy_pool) {
    require(m.amplitude > 0.0, "cohort: mode amplitude must be positive");
    require(m.sigma <= 0.0, "cohort: healthy modes must not grow (sigma <= 0)");
  }
  require(unstable_mode.amplitude > 0.0 && sharp_mode.amplitude > 0.0, "cohort: mode amplitude must be positive");
  require(female_fraction >= 0.0 && female_fraction <= 1.0, "cohort: female_fraction must lie in [0,1]");
}

std::vector<double> gaussian_bump(int height, int width, double cy, double cx, double radius) {
  std::vector<double> out(static_cast<std::size_t>(height) * width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      out[static_cast<std::size_t>(y) * width + x] = std::exp(-d2 / (2.0 * radius * radius));
    }
  normalize_l2(out);
  return out;
}

std::vector<double> sharp_patch(int height, int width, int y0, int x0, int size) {
  std::vector<double> out(static_cast<std::size_t>(height) * width, 0.0);
  for (int y = std::max(0, y0); y < std::min(height, y0 + size); ++y)
    for (int x = std::max(0, x0); x < std::min(width, x0 + size); ++x) out[static_cast<std::size_t>(y) * width + x] = 1.0;
  normalize_l2(out);
  return out;
}

PlantedMode pool_mode(const CohortSpec& spec, ViewLabel view, int slot, const ModeTemplate& tmpl) {
  std::mt19937_64 rng(mix_seed(spec.seed, 1000ULL * (static_cast<int>(view) + 1) + slot));
  const int H = spec.height, W = spec.width;
  const double radius = std::max(1.0, std::min(H, W) / 10.0);
  auto centre = [&](int extent) { return extent * (0.2 + 0.6 * uniform01(rng)); };

  PlantedMode mode;
  mode.sigma = tmpl.sigma;
  mode.omega = tmpl.omega;
  mode.amplitude = tmpl.amplitude;
  if (tmpl.sharp) {
    const int size = std::max(1, std::min(H, W) / 4);
    mode.pattern = sharp_patch(H, W, static_cast<int>(centre(H - size)), static_cast<int>(centre(W - size)), size);
  } else {
    mode.pattern = gaussian_bump(H, W, centre(H), centre(W), radius);
  }
  if (tmpl.omega != 0.0) mode.quadrature = gaussian_bump(H, W, centre(H), centre(W), radius);
  return mode;
}

std::vector<double> render_clean(const std::vector<PlantedMode>& modes, int frames, double dt, int height, int width) {
  const std::size_t fs = static_cast<std::size_t>(height) * width;
  std::vector<double> out(frames * fs, 0.0);
  for (const auto& m : modes) {
    require(m.pattern.size() == fs, "render: pattern size does not match the frame shape");
    const bool rotating = m.omega != 0.0;
    if (rotating) require(m.quadrature.size() == fs, "render: rotating mode needs a quadrature pattern");
    for (int t = 0; t < frames; ++t) {
      const double time = t * dt;
      const double envelope = m.amplitude * std::exp(m.sigma * time);
      const double c = envelope * std::cos(m.omega * time + m.phase);
      const double s = rotating ? envelope * std::sin(m.omega * time + m.phase) : 0.0;
      double* dst = out.data() + t * fs;
      for (std::size_t p = 0; p < fs; ++p) {
        dst[p] += c * m.pattern[p];
        if (rotating) dst[p] += s * m.quadrature[p];
      }
    }
  }
  return out;
}

FrameSequence render_sequence(const std::vector<PlantedMode>& modes, int frames, double dt, int height, int width,
                              double noise_sd, std::mt19937_64& rng, ViewLabel view, const std::string& patient_id,
                              bool normalize) {
  std::vector<double> x = render_clean(modes, frames, dt, height, width);
  if (noise_sd > 0.0) {
    NormalSource normal(rng);
    for (double& v : x) v += noise_sd * normal.next();
  }
  std::vector<float> px(x.size(), 0.0f);
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  if (normalize && *hi > *lo) {
    const double l = *lo, range = *hi - *lo;
    for (std::size_t i = 0; i < x.size(); ++i) px[i] = static_cast<float>(std::clamp((x[i] - l) / range, 0.0, 1.0));
  } else if (!normalize) {
    for (std::size_t i = 0; i < x.size(); ++i) px[i] = static_cast<float>(std::clamp(x[i], 0.0, 1.0));
  }
  return FrameSequence(frames, height, width, dt, view, patient_id, std::move(px));
}

Complex planted_eigenvalue(double sigma, double omega, double dt) { return std::exp(Complex(sigma, omega) * dt); }

SyntheticPatient gen_patient(const CohortSpec& spec, int label, std::mt19937_64& rng, const std::string& patient_id) {
  spec.validate();
  require(label == 0 || label == 1, "gen_patient: label must be 0 or 1");
  NormalSource normal(rng);

  // Patient-level draws: heart-rate jitter and clinical covariates.
  const double rate = 1.0 + spec.omega_jitter * (2.0 * uniform01(rng) - 1.0);
  const ClinicalDistribution& cd = label == 1 ? spec.positive : spec.negative;
  ClinicalRecord clinical;
  clinical.ef = clamp_draw(cd.ef_mean, cd.ef_sd, 10.0, 80.0, normal);
  clinical.dim = clamp_draw(cd.dim_mean, cd.dim_sd, 30.0, 80.0, normal);
  clinical.age = std::round(clamp_draw(cd.age_mean, cd.age_sd, 16.0, 96.0, normal));
  clinical.sex = uniform01(rng) < spec.female_fraction ? 1 : 0;

  struct Slot {
    ModeTemplate tmpl;
    int slot;
  };
  std::vector<Slot> slots;
  for (std::size_t i = 0; i < spec.healthy_pool.size(); ++i) slots.push_back({spec.healthy_pool[i], static_cast<int>(i)});
  if (label == 1) {
    if (spec.signature != DiseaseSignature::kSharp) slots.push_back({spec.unstable_mode, 100});
    if (spec.signature != DiseaseSignature::kUnstable) slots.push_back({spec.sharp_mode, 101});
  }

  SyntheticPatient out;
  out.study.patient_id = patient_id;
  out.study.clinical = clinical;
  out.study.label = label;
  out.oracle.patient_id = patient_id;
  out.oracle.dt = spec.dt;
  for (const auto& s : slots) {
    const double omega = s.tmpl.omega * rate;
    out.oracle.modes.push_back({s.tmpl.sigma, omega, planted_eigenvalue(s.tmpl.sigma, omega, spec.dt)});
  }

  for (ViewLabel view : kAllViews) {
    std::vector<PlantedMode> modes;
    for (const auto& s : slots) {
      PlantedMode m = pool_mode(spec, view, s.slot, s.tmpl);
      m.omega *= rate;
      m.amplitude *= 1.0 + spec.amplitude_jitter * (2.0 * uniform01(rng) - 1.0);
      m.phase = kTwoPi * uniform01(rng);
      modes.push_back(std::move(m));
    }
    out.study.sequences.emplace(view, render_sequence(modes, spec.frames, spec.dt, spec.height, spec.width,
                                                      spec.noise_sd, rng, view, patient_id));
  }
  return out;
}

CohortPlan plan_cohort(const CohortSpec& spec) {
  spec.validate();
  const int n = spec.n_patients;
  const int n_pos = static_cast<int>(std::lround(n * spec.fraction_positive));
  const int n_test = static_cast<int>(std::lround(n * spec.test_fraction));

  std::mt19937_64 rng(mix_seed(spec.seed, 0xC0407));
  CohortPlan plan;
  plan.labels.assign(n, 0);
  std::fill(plan.labels.begin(), plan.labels.begin() + n_pos, 1);
  std::shuffle(plan.labels.begin(), plan.labels.end(), rng);

  // Held-out flags, stratified by label.
  plan.test.assign(n, false);
  const int test_pos = static_cast<int>(std::lround(static_cast<double>(n_test) * n_pos / n));
  for (int cls = 1; cls >= 0; --cls) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i)
      if (plan.labels[i] == cls) members.push_back(i);
    std::shuffle(members.begin(), members.end(), rng);
    const int take = std::min<int>(cls == 1 ? test_pos : n_test - test_pos, static_cast<int>(members.size()));
    for (int k = 0; k < take; ++k) plan.test[members[k]] = true;
  }
  return plan;
}

SyntheticPatient gen_planned_patient(const CohortSpec& spec, const CohortPlan& plan, int index) {
  require(index >= 0 && index < static_cast<int>(plan.labels.size()), "gen_planned_patient: index out of range");
  std::mt19937_64 prng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
  SyntheticPatient p = gen_patient(spec, plan.labels[index], prng, patient_name(index));
  p.test = plan.test[index];
  return p;
}

std::vector<SyntheticPatient> gen_cohort(const CohortSpec& spec) {
  const CohortPlan plan = plan_cohort(spec);
  std::vector<SyntheticPatient> cohort;
  cohort.reserve(spec.n_patients);
  for (int i = 0; i < spec.n_patients; ++i) cohort.push_back(gen_planned_patient(spec, plan, i));
  return cohort;
}

std::vector<Complex> oracle_eigenvalues(const OracleRecord& record) {
  std::vector<Complex> out;
  for (const auto& m : record.modes) {
    const Complex lam = planted_eigenvalue(m.sigma, m.omega, record.dt);
    out.push_back(lam);
    if (m.omega != 0.0) out.push_back(std::conj(lam));
  }
  return out;
}

std::string oracle_csv(const std::vector<SyntheticPatient>& cohort) {
  std::vector<OracleRecord> records;
  for (const auto& p : cohort) records.push_back(p.oracle);
  return oracle_csv(std::span<const OracleRecord>(records));
}

std::string oracle_csv(std::span<const OracleRecord> records) {
  std::string out = "patient_id,mode_index,sigma,omega,lambda_re,lambda_im\n";
  for (const auto& r : records) {
    for (std::size_t j = 0; j < r.modes.size(); ++j) {
      const auto& m = r.modes[j];
      out += r.patient_id + "," + std::to_string(j) + "," + format_number(m.sigma) + "," +
             format_number(m.omega) + "," + format_number(m.lambda.real()) + "," + format_number(m.lambda.imag()) + "\n";
    }
  }
  return out;
}

}  // namespace koopscore
