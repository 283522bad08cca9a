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

#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>

#include "error.hpp"
#include "json.hpp"
#include "text.hpp"

namespace koopscore {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_rows(std::span<const ScoredRow> rows, const char* what) {
  int pos = 0, neg = 0;
  for (const auto& r : rows) {
    require(r.label == 0 || r.label == 1, std::string(what) + ": labels must be binary");
    require(std::isfinite(r.score), std::string(what) + ": scores must be finite");
    (r.label ? pos : neg)++;
  }
  require(pos > 0 && neg > 0, std::string(what) + ": both classes must be present");
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1.0));
}

}  // namespace

RocCurve roc(std::span<const ScoredRow> rows) {
  check_rows(rows, "roc");
  std::vector<const ScoredRow*> sorted;
  for (const auto& r : rows) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) { return a->score > b->score; });

  long n_pos = 0, n_neg = 0;
  for (const auto& r : rows) (r.label ? n_pos : n_neg)++;

  RocCurve c;
  c.fpr.push_back(0.0);
  c.tpr.push_back(0.0);
  c.threshold.push_back(std::numeric_limits<double>::infinity());
  long tp = 0, fp = 0;
  // Twice the area in count units keeps the sum exact until the final divide.
  double area2 = 0.0;
  std::size_t i = 0;
  while (i < sorted.size()) {
    const double s = sorted[i]->score;
    const long tp0 = tp, fp0 = fp;
    for (; i < sorted.size() && sorted[i]->score == s; ++i) (sorted[i]->label ? tp : fp)++;
    area2 += static_cast<double>(fp - fp0) * static_cast<double>(tp + tp0);
    c.fpr.push_back(static_cast<double>(fp) / n_neg);
    c.tpr.push_back(static_cast<double>(tp) / n_pos);
    c.threshold.push_back(s);
  }
  c.auc = area2 / (2.0 * n_pos * n_neg);
  return c;
}

double auc_concordance(std::span<const ScoredRow> rows) {
  check_rows(rows, "auc_concordance");
  double concordant = 0.0;
  long n_pos = 0, n_neg = 0;
  for (const auto& p : rows) {
    if (p.label != 1) continue;
    ++n_pos;
    for (const auto& q : rows) {
      if (q.label != 0) continue;
      if (p.score > q.score) concordant += 1.0;
      else if (p.score == q.score) concordant += 0.5;
    }
  }
  for (const auto& r : rows) n_neg += r.label == 0;
  return concordant / (static_cast<double>(n_pos) * n_neg);
}

std::vector<SweepPoint> sens_spec_sweep(std::span<const ScoredRow> rows, std::span<const double> thresholds) {
  check_rows(rows, "sens_spec_sweep");
  require(!thresholds.empty(), "sens_spec_sweep: threshold grid is empty");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    require(thresholds[i] > thresholds[i - 1], "sens_spec_sweep: thresholds must be strictly ascending");
  std::vector<SweepPoint> out;
  for (double t : thresholds) {
    const Confusion c = confusion(rows, t);
    out.push_back({t, c.sensitivity, c.specificity, c.accuracy});
  }
  return out;
}

std::optional<double> sweep_crossing(std::span<const SweepPoint> sweep) {
  for (std::size_t i = 0; i < sweep.size(); ++i) {
    const double d = sweep[i].sensitivity - sweep[i].specificity;
    if (d == 0.0) return sweep[i].threshold;
    if (i + 1 < sweep.size()) {
      const double e = sweep[i + 1].sensitivity - sweep[i + 1].specificity;
      if ((d > 0.0) != (e > 0.0) && e != 0.0) {
        const double f = d / (d - e);
        return sweep[i].threshold + f * (sweep[i + 1].threshold - sweep[i].threshold);
      }
    }
  }
  return std::nullopt;
}

Confusion confusion(std::span<const ScoredRow> rows, double threshold) {
  require(!rows.empty(), "confusion: cohort is empty");
  Confusion c;
  for (const auto& r : rows) {
    require(r.label == 0 || r.label == 1, "confusion: labels must be binary");
    const bool predicted = r.score >= threshold;
    if (r.label == 1) (predicted ? c.tp : c.fn)++;
    else (predicted ? c.fp : c.tn)++;
  }
  const int n = c.tp + c.fp + c.tn + c.fn;
  c.accuracy = static_cast<double>(c.tp + c.tn) / n;
  c.sensitivity = c.tp + c.fn ? static_cast<double>(c.tp) / (c.tp + c.fn) : kNaN;
  c.specificity = c.tn + c.fp ? static_cast<double>(c.tn) / (c.tn + c.fp) : kNaN;
  return c;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  require(!sorted.empty(), "quantile: empty input");
  const double pos = (sorted.size() - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - lo) * (sorted[hi] - sorted[lo]);
}

CohortSummary summarize_cohort(std::span<const double> values) {
  require(!values.empty(), "summarize_cohort: empty input");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  CohortSummary s;
  s.n = static_cast<int>(v.size());
  s.mean = mean_of(v);
  s.sd = sample_sd(v);
  s.min = v.front();
  s.max = v.back();
  s.median = quantile_sorted(v, 0.5);
  s.q1 = quantile_sorted(v, 0.25);
  s.q3 = quantile_sorted(v, 0.75);
  return s;
}

double roc_interpolate(const RocCurve& c, double x) {
  double best = 0.0;
  for (std::size_t i = 0; i < c.fpr.size(); ++i) {
    if (c.fpr[i] <= x) best = std::max(best, c.tpr[i]);
    if (i + 1 < c.fpr.size() && c.fpr[i] < x && x < c.fpr[i + 1]) {
      const double f = (x - c.fpr[i]) / (c.fpr[i + 1] - c.fpr[i]);
      best = std::max(best, c.tpr[i] + f * (c.tpr[i + 1] - c.tpr[i]));
    }
  }
  return best;
}

namespace {

Evaluation aggregate(std::vector<FoldMetrics> folds, std::vector<ScoredRow> pooled, std::span<const double> thresholds,
                     double classification_threshold, bool cross_validated) {
  Evaluation ev;
  ev.thresholds.assign(thresholds.begin(), thresholds.end());
  ev.classification_threshold = classification_threshold;

  std::vector<double> aucs;
  for (const auto& f : folds) aucs.push_back(f.auc);
  ev.auc = mean_of(aucs);
  ev.auc_sd = cross_validated ? sample_sd(aucs) : kNaN;

  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    std::vector<double> se, sp, ac;
    for (const auto& f : folds) {
      se.push_back(f.sweep[t].sensitivity);
      sp.push_back(f.sweep[t].specificity);
      ac.push_back(f.sweep[t].accuracy);
    }
    ev.sweep.push_back({thresholds[t], mean_of(se), sample_sd(se), mean_of(sp), sample_sd(sp), mean_of(ac), sample_sd(ac)});
  }
  for (int g = 0; g < kRocGridPoints; ++g) {
    const double x = static_cast<double>(g) / (kRocGridPoints - 1);
    std::vector<double> ys;
    for (const auto& f : folds) ys.push_back(g == 0 ? 0.0 : roc_interpolate(f.roc, x));
    ev.roc_fpr.push_back(x);
    ev.roc_tpr.push_back(mean_of(ys));
    ev.roc_tpr_sd.push_back(sample_sd(ys));
  }
  std::vector<SweepPoint> mean_sweep;
  for (const auto& b : ev.sweep) mean_sweep.push_back({b.threshold, b.sensitivity, b.specificity, b.accuracy});
  ev.crossing = sweep_crossing(mean_sweep);
  ev.at_threshold = confusion(pooled, classification_threshold);
  if (cross_validated) ev.folds = std::move(folds);
  ev.rows = std::move(pooled);
  return ev;
}

FoldMetrics fold_metrics(int fold, std::span<const ScoredRow> rows, std::span<const double> thresholds) {
  FoldMetrics f;
  f.fold = fold;
  f.roc = roc(rows);
  f.auc = f.roc.auc;
  f.sweep = sens_spec_sweep(rows, thresholds);
  return f;
}

}  // namespace

Evaluation evaluate_cohort(std::span<const ScoredRow> rows, std::span<const double> thresholds,
                           double classification_threshold) {
  std::vector<FoldMetrics> folds{fold_metrics(0, rows, thresholds)};
  return aggregate(std::move(folds), {rows.begin(), rows.end()}, thresholds, classification_threshold, false);
}

Evaluation cv_report(const std::vector<std::vector<ScoredRow>>& folds, std::span<const double> thresholds,
                     double classification_threshold) {
  require(folds.size() >= 2, "cv_report: at least 2 folds are required");
  std::vector<FoldMetrics> metrics;
  std::vector<ScoredRow> pooled;
  for (std::size_t k = 0; k < folds.size(); ++k) {
    metrics.push_back(fold_metrics(static_cast<int>(k), folds[k], thresholds));
    pooled.insert(pooled.end(), folds[k].begin(), folds[k].end());
  }
  return aggregate(std::move(metrics), std::move(pooled), thresholds, classification_threshold, true);
}

Evaluation evaluate_rows(std::span<const ScoredRow> rows, std::span<const double> thresholds,
                         double classification_threshold) {
  const bool folded = !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.fold >= 0; });
  if (!folded) return evaluate_cohort(rows, thresholds, classification_threshold);
  std::map<int, std::vector<ScoredRow>> by_fold;
  for (const auto& r : rows) by_fold[r.fold].push_back(r);
  if (by_fold.size() < 2) return evaluate_cohort(rows, thresholds, classification_threshold);
  std::vector<std::vector<ScoredRow>> folds;
  for (auto& [k, v] : by_fold) folds.push_back(std::move(v));
  return cv_report(folds, thresholds, classification_threshold);
}

// --- Report files ---------------------------------------------------------------

std::string metrics_csv(const Evaluation& ev) {
  auto num = [](double v) { return std::isfinite(v) ? format_number(v) : std::string(); };
  std::string out =
      "section,fold,auc,threshold,sensitivity,specificity,accuracy,auc_sd,sensitivity_sd,specificity_sd,accuracy_sd\n";
  for (const auto& f : ev.folds) {
    for (const auto& p : f.sweep) {
      out += "fold," + std::to_string(f.fold) + "," + num(f.auc) + "," + num(p.threshold) + "," + num(p.sensitivity) +
             "," + num(p.specificity) + "," + num(p.accuracy) + ",,,,\n";
    }
  }
  const bool cv = !ev.folds.empty();
  for (const auto& b : ev.sweep) {
    out += "aggregate,," + num(ev.auc) + "," + num(b.threshold) + "," + num(b.sensitivity) + "," + num(b.specificity) +
           "," + num(b.accuracy) + "," + (cv ? num(ev.auc_sd) + "," + num(b.sensitivity_sd) + "," +
                                                   num(b.specificity_sd) + "," + num(b.accuracy_sd)
                                             : std::string(",,,")) +
           "\n";
  }
  return out;
}

namespace {

// Plot frame shared by the three figures.
constexpr double kW = 480, kH = 360, kL = 56, kR = 16, kT = 28, kB = 44;

std::string f2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

double px(double x, double x0, double x1) { return kL + (x - x0) / (x1 - x0) * (kW - kL - kR); }
double py(double y, double y0, double y1) { return kH - kB - (y - y0) / (y1 - y0) * (kH - kT - kB); }

std::string svg_open(const std::string& title) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f2(kW) + "\" height=\"" + f2(kH) + "\" viewBox=\"0 0 " +
         f2(kW) + " " + f2(kH) + "\" font-family=\"sans-serif\" font-size=\"11\">\n" +
         "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"" + f2(kW / 2) +
         "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" + title + "</text>\n";
}

std::string axes(double x0, double x1, double y0, double y1, const std::string& xlabel, const std::string& ylabel) {
  std::string s = "<g stroke=\"#333\" stroke-width=\"1\" fill=\"none\">\n";
  s += "<line x1=\"" + f2(kL) + "\" y1=\"" + f2(kH - kB) + "\" x2=\"" + f2(kW - kR) + "\" y2=\"" + f2(kH - kB) + "\"/>\n";
  s += "<line x1=\"" + f2(kL) + "\" y1=\"" + f2(kT) + "\" x2=\"" + f2(kL) + "\" y2=\"" + f2(kH - kB) + "\"/>\n</g>\n";
  s += "<g fill=\"#333\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double fx = x0 + (x1 - x0) * i / 5.0, fy = y0 + (y1 - y0) * i / 5.0;
    s += "<text x=\"" + f2(px(fx, x0, x1)) + "\" y=\"" + f2(kH - kB + 14) + "\" text-anchor=\"middle\">" +
         format_number(fx, 3) + "</text>\n";
    s += "<text x=\"" + f2(kL - 6) + "\" y=\"" + f2(py(fy, y0, y1) + 4) + "\" text-anchor=\"end\">" +
         format_number(fy, 3) + "</text>\n";
  }
  s += "<text x=\"" + f2((kL + kW - kR) / 2) + "\" y=\"" + f2(kH - 8) + "\" text-anchor=\"middle\">" + xlabel +
       "</text>\n";
  s += "<text x=\"14\" y=\"" + f2((kT + kH - kB) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       f2((kT + kH - kB) / 2) + ")\">" + ylabel + "</text>\n</g>\n";
  return s;
}

std::string polyline(const std::vector<double>& xs, const std::vector<double>& ys, const std::string& style) {
  std::string s = "<polyline fill=\"none\" " + style + " points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? " " : "") + f2(px(xs[i], 0, 1)) + "," + f2(py(ys[i], 0, 1));
  return s + "\"/>\n";
}

std::string band(const std::vector<double>& xs, const std::vector<double>& mean, const std::vector<double>& sd,
                 const std::string& fill) {
  std::string s = "<polygon fill=\"" + fill + "\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i)
    s += (i ? " " : "") + f2(px(xs[i], 0, 1)) + "," + f2(py(std::min(1.0, mean[i] + sd[i]), 0, 1));
  for (std::size_t i = xs.size(); i-- > 0;)
    s += " " + f2(px(xs[i], 0, 1)) + "," + f2(py(std::max(0.0, mean[i] - sd[i]), 0, 1));
  return s + "\"/>\n";
}

std::string escape_xml(const std::string& in) {
  std::string out;
  for (char c : in) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string roc_svg(const Evaluation& ev) {
  std::string s = svg_open("ROC");
  s += axes(0, 1, 0, 1, "False positive rate", "True positive rate");
  s += "<line x1=\"" + f2(px(0, 0, 1)) + "\" y1=\"" + f2(py(0, 0, 1)) + "\" x2=\"" + f2(px(1, 0, 1)) + "\" y2=\"" +
       f2(py(1, 0, 1)) + "\" stroke=\"#999\" stroke-dasharray=\"4,4\"/>\n";
  s += band(ev.roc_fpr, ev.roc_tpr, ev.roc_tpr_sd, "#1f77b4");
  s += polyline(ev.roc_fpr, ev.roc_tpr, "stroke=\"#1f77b4\" stroke-width=\"2\"");
  std::string label = "AUC = " + format_number(ev.auc, 3);
  if (std::isfinite(ev.auc_sd)) label += " \xC2\xB1 " + format_number(ev.auc_sd, 2);
  s += "<text x=\"" + f2(px(0.95, 0, 1)) + "\" y=\"" + f2(py(0.08, 0, 1)) + "\" text-anchor=\"end\">" + label +
       "</text>\n</svg>\n";
  return s;
}

std::string sens_spec_svg(const Evaluation& ev) {
  std::vector<double> t, se, sesd, sp, spsd;
  for (const auto& b : ev.sweep) {
    t.push_back(b.threshold);
    se.push_back(b.sensitivity);
    sesd.push_back(std::isfinite(b.sensitivity_sd) ? b.sensitivity_sd : 0.0);
    sp.push_back(b.specificity);
    spsd.push_back(std::isfinite(b.specificity_sd) ? b.specificity_sd : 0.0);
  }
  std::string s = svg_open("Sensitivity and specificity");
  s += axes(0, 1, 0, 1, "Threshold", "Rate");
  s += band(t, se, sesd, "#d62728");
  s += band(t, sp, spsd, "#2ca02c");
  s += polyline(t, se, "stroke=\"#d62728\" stroke-width=\"2\"");
  s += polyline(t, sp, "stroke=\"#2ca02c\" stroke-width=\"2\"");
  if (ev.crossing) {
    const double x = px(*ev.crossing, 0, 1);
    s += "<line x1=\"" + f2(x) + "\" y1=\"" + f2(kT) + "\" x2=\"" + f2(x) + "\" y2=\"" + f2(kH - kB) +
         "\" stroke=\"#555\" stroke-dasharray=\"3,3\"/>\n";
    s += "<text x=\"" + f2(x + 4) + "\" y=\"" + f2(kT + 12) + "\">crossing " + format_number(*ev.crossing, 3) +
         "</text>\n";
  }
  s += "<text x=\"" + f2(kW - kR - 4) + "\" y=\"" + f2(kT + 12) +
       "\" text-anchor=\"end\" fill=\"#d62728\">sensitivity</text>\n";
  s += "<text x=\"" + f2(kW - kR - 4) + "\" y=\"" + f2(kT + 26) +
       "\" text-anchor=\"end\" fill=\"#2ca02c\">specificity</text>\n</svg>\n";
  return s;
}

std::string scatter_svg(const Evaluation& ev) {
  const std::size_t n = ev.rows.size();
  double amin = std::numeric_limits<double>::infinity(), amax = -amin;
  for (const auto& r : ev.rows) {
    amin = std::min(amin, r.age);
    amax = std::max(amax, r.age);
  }
  const double x1 = std::max<double>(1.0, static_cast<double>(n) - 1.0);
  std::string s = svg_open("Scores");
  s += axes(0, x1, 0, 1, "Patient index", "Score");
  const double ty = py(ev.classification_threshold, 0, 1);
  s += "<line x1=\"" + f2(kL) + "\" y1=\"" + f2(ty) + "\" x2=\"" + f2(kW - kR) + "\" y2=\"" + f2(ty) +
       "\" stroke=\"#333\" stroke-dasharray=\"2,3\"/>\n";
  s += "<g fill-opacity=\"0.7\">\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = ev.rows[i];
    const double radius = amax > amin ? 1.5 + 4.5 * (r.age - amin) / (amax - amin) : 3.0;
    s += "<circle class=\"patient\" cx=\"" + f2(px(static_cast<double>(i), 0, x1)) + "\" cy=\"" +
         f2(py(std::clamp(r.score, 0.0, 1.0), 0, 1)) + "\" r=\"" + f2(radius) + "\" fill=\"" +
         (r.label ? "#d62728" : "#1f77b4") + "\"><title>" + escape_xml(r.patient_id) + "</title></circle>\n";
  }
  s += "</g>\n</svg>\n";
  return s;
}

void render_report(const Evaluation& ev, const std::filesystem::path& out_dir) {
  require(!ev.thresholds.empty(), "render_report: threshold grid is empty");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create report directory " + out_dir.string() + ": " + ec.message());
  write_file(out_dir / "metrics.csv", metrics_csv(ev));
  write_file(out_dir / "roc.svg", roc_svg(ev));
  write_file(out_dir / "sens_spec.svg", sens_spec_svg(ev));
  write_file(out_dir / "scatter.svg", scatter_svg(ev));

  auto summary_json = [](const CohortSummary& c) {
    return nlohmann::ordered_json{{"n", c.n},   {"mean", c.mean},     {"sd", c.sd}, {"min", c.min},
                                  {"max", c.max}, {"median", c.median}, {"q1", c.q1}, {"q3", c.q3}};
  };
  nlohmann::ordered_json j;
  j["n"] = ev.rows.size();
  j["n_positive"] = std::count_if(ev.rows.begin(), ev.rows.end(), [](const auto& r) { return r.label == 1; });
  j["auc"] = ev.auc;
  j["auc_sd"] = std::isfinite(ev.auc_sd) ? nlohmann::ordered_json(ev.auc_sd) : nlohmann::ordered_json(nullptr);
  auto fold_auc = nlohmann::ordered_json::array();
  for (const auto& f : ev.folds) fold_auc.push_back(f.auc);
  j["fold_auc"] = std::move(fold_auc);
  j["crossing"] = ev.crossing ? nlohmann::ordered_json(*ev.crossing) : nlohmann::ordered_json(nullptr);
  j["classification_threshold"] = ev.classification_threshold;
  const Confusion& c = ev.at_threshold;
  j["confusion"] = {{"tp", c.tp},         {"fp", c.fp},
                    {"tn", c.tn},         {"fn", c.fn},
                    {"accuracy", c.accuracy}, {"sensitivity", c.sensitivity},
                    {"specificity", c.specificity}};
  nlohmann::ordered_json ages;
  for (int cls : {-1, 0, 1}) {
    std::vector<double> a;
    for (const auto& r : ev.rows)
      if (cls < 0 || r.label == cls) a.push_back(r.age);
    if (!a.empty()) ages[cls < 0 ? "all" : (cls ? "positive" : "negative")] = summary_json(summarize_cohort(a));
  }
  j["age"] = std::move(ages);
  write_file(out_dir / "summary.json", j.dump(2) + "\n");
}

}  // namespace koopscore
