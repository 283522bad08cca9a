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

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace koopscore {

struct ScoredRow {
  std::string patient_id;
  double score = 0.0;
  int label = 0;
  double age = 0.0;
  int fold = -1;  // -1 when not part of a cross-validation run
};

struct RocCurve {
  std::vector<double> fpr;        // starts at 0, ends at 1
  std::vector<double> tpr;        // starts at 0, ends at 1
  std::vector<double> threshold;  // score cut that produced each point (+inf for the origin)
  double auc = 0.0;
};

/// Threshold sweep over the distinct scores, descending, ties grouped;
/// trapezoidal area.
RocCurve roc(std::span<const ScoredRow> rows);

/// (concordant + 0.5 tied) / (n_pos n_neg).
double auc_concordance(std::span<const ScoredRow> rows);

struct SweepPoint {
  double threshold = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
};

/// Predict positive iff score >= threshold. Thresholds must be ascending.
std::vector<SweepPoint> sens_spec_sweep(std::span<const ScoredRow> rows, std::span<const double> thresholds);

/// Threshold where sensitivity and specificity cross, linearly interpolated
/// between grid points; nullopt when the curves never meet on the grid.
std::optional<double> sweep_crossing(std::span<const SweepPoint> sweep);

struct Confusion {
  int tp = 0, fp = 0, tn = 0, fn = 0;
  double accuracy = 0.0;
  double sensitivity = 0.0;  // NaN without positives
  double specificity = 0.0;  // NaN without negatives
};

Confusion confusion(std::span<const ScoredRow> rows, double threshold);

struct CohortSummary {
  int n = 0;
  double mean = 0.0;
  double sd = 0.0;  // n - 1 denominator, 0 for a single value
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
};

/// Quartiles interpolate linearly between order statistics at (n - 1) p.
CohortSummary summarize_cohort(std::span<const double> values);

/// Linear-interpolation quantile of sorted data, p in [0, 1].
double quantile_sorted(std::span<const double> sorted, double p);

struct FoldMetrics {
  int fold = 0;
  double auc = 0.0;
  RocCurve roc;
  std::vector<SweepPoint> sweep;
};

struct SweepBand {
  double threshold = 0.0;
  double sensitivity = 0.0, sensitivity_sd = 0.0;
  double specificity = 0.0, specificity_sd = 0.0;
  double accuracy = 0.0, accuracy_sd = 0.0;
};

struct Evaluation {
  std::vector<double> thresholds;
  double classification_threshold = 0.45;
  /// One entry per fold; empty for a single-cohort evaluation.
  std::vector<FoldMetrics> folds;
  double auc = 0.0;     // mean fold AUC, or the pooled AUC without folds
  double auc_sd = 0.0;  // sample sd over folds, NaN without folds
  std::vector<SweepBand> sweep;
  /// Mean ROC (vertical averaging on a common false-positive-rate grid).
  std::vector<double> roc_fpr, roc_tpr, roc_tpr_sd;
  std::optional<double> crossing;
  Confusion at_threshold;  // pooled rows
  std::vector<ScoredRow> rows;
};

inline constexpr int kRocGridPoints = 101;

/// Single scored cohort.
Evaluation evaluate_cohort(std::span<const ScoredRow> rows, std::span<const double> thresholds,
                           double classification_threshold);

/// Per-fold metrics aggregated on the common threshold grid (>= 2 folds).
Evaluation cv_report(const std::vector<std::vector<ScoredRow>>& folds, std::span<const double> thresholds,
                     double classification_threshold);

/// Groups rows by their fold column and runs cv_report; rows without folds
/// give evaluate_cohort.
Evaluation evaluate_rows(std::span<const ScoredRow> rows, std::span<const double> thresholds,
                         double classification_threshold);

/// tpr at `x` on a step-free ROC polyline (maximum tpr where several points
/// share the same fpr).
double roc_interpolate(const RocCurve& curve, double x);

std::string metrics_csv(const Evaluation& ev);
std::string roc_svg(const Evaluation& ev);
std::string sens_spec_svg(const Evaluation& ev);
std::string scatter_svg(const Evaluation& ev);

/// metrics.csv, roc.svg, sens_spec.svg, scatter.svg, summary.json.
void render_report(const Evaluation& ev, const std::filesystem::path& out_dir);

}  // namespace koopscore
