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
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "risk.hpp"

namespace koopscore {

struct TrainConfig {
  double learning_rate = 0.05;
  int epochs = 300;
  int batch_size = 16;
  std::uint64_t seed = 7;
  double l2_penalty = 1e-4;
  int patience = 30;  // epochs without validation improvement; 0 disables
  int folds = 5;

  void validate() const;
};

inline constexpr double kProbabilityClamp = 1e-7;
/// eta is kept at or above this after every update.
inline constexpr double kMinEta = 1e-3;

/// beta, Omega zero; Q, V and embedder weights Glorot-uniform from `seed`;
/// biases zero; eta = 1; z0 = 0.
RiskParams init_params(const ModelDims& dims, std::uint64_t seed);

/// Mean / sample sd of ef, dim, age (sex is passed through unscaled).
Standardization fit_clinical_norm(std::span<const StudyFeatures> train);
/// Mean / sample sd of the continuous mode features over every mode.
Standardization fit_feature_norm(std::span<const StudyFeatures> train);

/// Sets z0 to the median pre-sigmoid score of `train`, so training starts at
/// the sigmoid midpoint instead of a saturated tail.
void center_offset(RiskModel& model, std::span<const StudyFeatures> train);

/// Mean clamped binary cross-entropy plus l2 * penalty_norm.
double loss(const RiskModel& model, std::span<const StudyFeatures> batch, double l2_penalty);

struct LossGradient {
  double loss = 0.0;
  RiskParams grad;
};

/// Exact gradient of `loss` with respect to every trainable parameter. The
/// gradient is zero through a clamped probability.
LossGradient gradients(const RiskModel& model, std::span<const StudyFeatures> batch, double l2_penalty);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;   // NaN without a validation set
  double best_loss = 0.0;  // running best of the monitored loss
};

struct TrainResult {
  RiskModel model;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  /// Patient ids whose gradients were applied (audit trail).
  std::vector<std::string> updated_ids;
};

/// Mini-batch gradient descent from `start.params`. With a validation set the
/// state of lowest validation loss is returned and training stops after
/// `patience` epochs without improvement; otherwise the final state.
TrainResult train(const RiskModel& start, std::span<const StudyFeatures> train_set, const TrainConfig& cfg,
                  std::span<const StudyFeatures> val_set = {});

/// Label-stratified fold index per patient; sizes differ by at most 1.
std::vector<int> kfold_split(std::span<const int> labels, int k, std::uint64_t seed);

inline constexpr int kModelFormatVersion = 1;

/// The model file header: dims, configuration, dictionaries, block list.
nlohmann::ordered_json describe_model(const RiskModel& model);

std::string encode_model(const RiskModel& model);
RiskModel decode_model(std::string_view bytes);
void save_model(const RiskModel& model, const std::filesystem::path& path);
RiskModel load_model(const std::filesystem::path& path);

}  // namespace koopscore
