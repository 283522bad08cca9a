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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "linalg.hpp"
#include "sequence.hpp"

namespace koopscore {

enum class DictionaryKind { kPcaLinear, kPcaRbf, kPcaPoly };

std::string_view to_string(DictionaryKind k);
DictionaryKind parse_dictionary_kind(std::string_view name);

struct DictConfig {
  DictionaryKind kind = DictionaryKind::kPcaLinear;
  int rank = 24;
  int n_centers = 16;  // pca-rbf
  int degree = 2;      // pca-poly
  std::uint64_t seed = 0;
};

/// Observable dictionary over flattened frames. Every kind starts from a PCA
/// projection c = B (x - mean); the lifted vector is
///   pca-linear: [1, c]
///   pca-rbf:    [1, c, exp(-|c - center_k|^2 / (2 width^2))...]
///   pca-poly:   every monomial of c with total degree <= degree (graded order)
struct Dictionary {
  DictionaryKind kind = DictionaryKind::kPcaLinear;
  int height = 0;
  int width = 0;
  int rank = 0;
  bool rank_reduced = false;  // requested rank exceeded the data rank
  Vector mean;                // P
  Matrix components;          // rank x P, orthonormal rows
  Matrix centers;             // n_centers x rank (pca-rbf)
  double rbf_width = 1.0;
  int degree = 1;

  int pixels() const { return height * width; }
  /// Lifted dimension m.
  int size() const;
  Vector coefficients(std::span<const float> frame) const;
  Vector lift(const Vector& coefficients) const;
  /// Variable-index multisets of the pca-poly monomials, in lift order.
  std::vector<std::vector<int>> monomials() const;
};

/// Fits the PCA basis on the pooled, mean-centred frames. Exact (Gram or
/// covariance eigenproblem) when either the frame count or the pixel count is
/// at most `kExactPcaLimit`; otherwise a seeded randomized range finder with
/// power iterations.
Dictionary fit_dictionary(std::span<const FrameSequence* const> training, const DictConfig& cfg);
Dictionary fit_dictionary(std::span<const FrameSequence> training, const DictConfig& cfg);

inline constexpr int kExactPcaLimit = 2048;

/// Singular values below this fraction of the largest count as zero when
/// estimating data rank (float32 payloads carry ~1e-7 relative noise).
inline constexpr double kRankTolerance = 1e-6;

}  // namespace koopscore
