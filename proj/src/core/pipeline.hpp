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
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dictionary.hpp"
#include "edmd.hpp"
#include "eval.hpp"
#include "json.hpp"
#include "model.hpp"
#include "risk.hpp"
#include "sequence.hpp"
#include "synth.hpp"

namespace koopscore {

struct EvalConfig {
  std::vector<double> thresholds;  // ascending in [0,1]; default 0.00, 0.01, ..., 1.00
  double classification_threshold = 0.45;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  int threads = 0;  // 0: hardware concurrency (still capped by KOOPSCORE_THREADS)
  SequenceConfig sequence;
  DictConfig dictionary;
  FilterConfig filter;
  double rcond = 1e-10;
  ModelDims dims;
  TrainConfig train;
  CohortSpec synth;
  EvalConfig evaluation;

  PipelineConfig();
  void validate() const;
  /// Pushes `seed` into every seeded sub-config.
  void set_seed(std::uint64_t s);
};

/// Missing keys keep their defaults; unknown keys are a validation error.
PipelineConfig parse_config(const nlohmann::json& j);
PipelineConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json config_to_json(const PipelineConfig& cfg);

std::vector<double> threshold_grid(double start, double stop, double step);

// --- Manifest -------------------------------------------------------------------

struct ManifestEntry {
  std::string patient_id;
  int label = -1;  // -1 when unknown
  std::string split = "train";
  ClinicalRecord clinical;
  std::map<ViewLabel, std::string> views;  // relative to the manifest directory
};

struct Manifest {
  std::filesystem::path root;  // directory the view paths are relative to
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> patients;
};

/// Validates every clinical record; a missing field is an error naming it.
Manifest parse_manifest(const nlohmann::json& j, const std::filesystem::path& root);
Manifest load_manifest(const std::filesystem::path& path);
nlohmann::ordered_json manifest_to_json(const Manifest& m);

// --- Execution helpers --------------------------------------------------------

/// Worker count: config threads (or hardware concurrency), capped by the
/// KOOPSCORE_THREADS environment variable.
int worker_count(const PipelineConfig& cfg);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
/// (lowest index) is rethrown after all workers stop.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// enhance followed by normalize_cycle.
FrameSequence preprocess(const FrameSequence& seq, const SequenceConfig& cfg);

/// Features of one study under a model's dictionaries and filter.
StudyFeatures extract_features(const ManifestEntry& entry, const std::filesystem::path& root, const RiskModel& model);

// --- Commands -----------------------------------------------------------------

struct SynthResult {
  int patients = 0;
  int sequences = 0;
  std::filesystem::path manifest;
};

/// KSQ1 sequences under out_dir/seq, out_dir/manifest.json, out_dir/oracle.csv.
/// n < 0 keeps the configured cohort size.
SynthResult cmd_synth(const PipelineConfig& cfg, int n, const std::filesystem::path& out_dir);

struct FoldAudit {
  int fold = -1;  // -1 for the final model
  std::vector<std::string> dictionary_ids;
  std::vector<std::string> normalization_ids;
  std::vector<std::string> gradient_ids;
  std::vector<std::string> validation_ids;
};

struct TrainOutput {
  Evaluation cv;
  std::vector<FoldAudit> audit;
  std::vector<std::string> held_out_ids;
};

/// k-fold cross-validation on the manifest's training split, then a final
/// model on every training patient. Writes fold_<k>.krm, model.krm,
/// cv_scores.csv, train_scores.csv, metrics.csv, history.csv, audit.json.
TrainOutput cmd_train(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
                      const std::filesystem::path& out_dir);

/// split: "all", "train" or "test"; patient: optional single id.
/// Writes scores.jsonl and scores.csv; returns the scores in manifest order.
std::vector<AcousticScore> cmd_score(const PipelineConfig& cfg, const std::filesystem::path& model_path,
                                     const std::filesystem::path& manifest_path, const std::string& split,
                                     const std::string& patient, const std::filesystem::path& out_dir);

/// Report for a scores CSV (with a fold column the per-fold aggregate is used).
Evaluation cmd_evaluate(const PipelineConfig& cfg, const std::filesystem::path& scores_csv,
                        const std::filesystem::path& out_dir);

/// Decomposition JSON of one sequence, with the model's dictionary for its
/// view or, without a model, a dictionary fitted on the sequence itself.
nlohmann::ordered_json cmd_decompose(const PipelineConfig& cfg, const std::filesystem::path& sequence,
                                     const std::filesystem::path& model_path, const std::filesystem::path& out_path);

/// patient_id,value,dyn,clin,inter,label,age[,fold]
std::vector<ScoredRow> parse_scores_csv(const std::string& text);

}  // namespace koopscore
