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

#include <string>
#include <vector>

#include "dictionary.hpp"
#include "json.hpp"
#include "linalg.hpp"
#include "sequence.hpp"

namespace koopscore {

/// Lifted snapshots: column j of `psi` is Psi(x_j), column j of `psi_prime`
/// is Psi(x_{j+1}), j = 0..T-2.
struct SnapshotMatrices {
  Matrix psi;
  Matrix psi_prime;
  double dt = 0.0;

  /// All T lifted frames [Psi(x_0) ... Psi(x_{T-1})].
  Matrix full() const;
};

struct KoopmanMode {
  Complex lambda;       // discrete-time eigenvalue
  Complex mu;           // ln(lambda) / dt
  CVector xi;           // left eigenvector of K (xi^T K = lambda xi^T)
  CVector phi_trace;    // xi^T Psi(x_t), t = 0..T-1, unit RMS
  Vector mode_field;    // H*W row-major real spatial pattern
  double energy = 0.0;  // mean |phi|^2 * |mode_field|^2
};

struct KoopmanDecomposition {
  ViewLabel view = ViewLabel::kPLAX;
  int height = 0;
  int width = 0;
  double dt = 0.0;
  bool degenerate = false;
  std::vector<KoopmanMode> modes;  // energy non-increasing
};

struct FilterConfig {
  double energy_floor = 1e-3;
  double modulus_floor = 0.1;
  int k_max = 12;
};

SnapshotMatrices lift(const FrameSequence& seq, const Dictionary& dict);

/// K = Psi' pinv(Psi); singular values <= rcond * sigma_max are discarded.
Matrix koopman_matrix(const SnapshotMatrices& snapshots, double rcond = 1e-10);

/// Eigendecomposition of K^T. Eigenvector phase: the largest-magnitude entry
/// of xi is real positive; scale: the eigenfunction trace has unit RMS.
/// Mode fields come from the joint least-squares fit of the frames onto all
/// eigenfunction traces, reduced to the real field of maximal norm
/// Re(e^{i theta} v).
KoopmanDecomposition decompose(const Matrix& koopman, const SnapshotMatrices& snapshots, const FrameSequence& seq,
                               const Dictionary& dict);

KoopmanDecomposition filter_modes(const KoopmanDecomposition& dec, const FilterConfig& cfg);

/// Principal-branch ln(lambda) / dt.
Complex continuous_eigen(Complex lambda, double dt);

/// max_t |phi(t+1) - lambda phi(t)| / max_t |phi(t)|.
double linearity_residual(const KoopmanMode& mode);

/// lift -> koopman_matrix -> decompose -> filter_modes.
KoopmanDecomposition run_edmd(const FrameSequence& seq, const Dictionary& dict, const FilterConfig& filter,
                              double rcond = 1e-10);

nlohmann::ordered_json to_json(const KoopmanDecomposition& dec);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace koopscore
