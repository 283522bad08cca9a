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

#include "edmd.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "error.hpp"

namespace koopscore {

namespace {

// Eigenvalues closer than this (relative) are treated as conjugate partners.
constexpr double kPairTolerance = 1e-8;
// Relative reconstruction residual above which K^T is reported as defective.
constexpr double kDefectTolerance = 1e-6;

bool is_real(Complex z) { return std::abs(z.imag()) <= 1e-14 * std::max(1.0, std::abs(z)); }

}  // namespace

Matrix SnapshotMatrices::full() const {
  Matrix out(psi.rows(), psi.cols() + 1);
  out.leftCols(psi.cols()) = psi;
  out.col(psi.cols()) = psi_prime.col(psi_prime.cols() - 1);
  return out;
}

SnapshotMatrices lift(const FrameSequence& seq, const Dictionary& dict) {
  require(seq.height() == dict.height && seq.width() == dict.width,
          "lift: sequence shape " + std::to_string(seq.height()) + "x" + std::to_string(seq.width()) +
              " does not match the dictionary basis");
  const int T = seq.frames();
  const int m = dict.size();
  Matrix all(m, T);
  for (int t = 0; t < T; ++t) all.col(t) = dict.lift(dict.coefficients(seq.frame(t)));
  return SnapshotMatrices{all.leftCols(T - 1), all.rightCols(T - 1), seq.dt()};
}

Matrix koopman_matrix(const SnapshotMatrices& s, double rcond) {
  require(rcond > 0.0 && rcond < 1.0, "koopman_matrix: rcond must lie in (0, 1)");
  require(s.psi.rows() == s.psi_prime.rows() && s.psi.cols() == s.psi_prime.cols(),
          "koopman_matrix: snapshot matrices differ in shape");
  int rank = 0;
  const Matrix pinv = pseudo_inverse(s.psi, rcond, &rank);
  if (rank == 0) throw NumericalError("koopman_matrix: every singular value of Psi is below the cut-off");
  return s.psi_prime * pinv;
}

Complex continuous_eigen(Complex lambda, double dt) {
  require(dt > 0.0, "continuous_eigen: dt must be positive");
  if (lambda == Complex(0.0, 0.0)) throw ValidationError("continuous_eigen: lambda = 0 has no logarithm");
  return std::log(lambda) / dt;
}

double linearity_residual(const KoopmanMode& mode) {
  const auto& phi = mode.phi_trace;
  double peak = 0.0, worst = 0.0;
  for (Eigen::Index t = 0; t < phi.size(); ++t) peak = std::max(peak, std::abs(phi(t)));
  for (Eigen::Index t = 0; t + 1 < phi.size(); ++t) worst = std::max(worst, std::abs(phi(t + 1) - mode.lambda * phi(t)));
  return peak > 0.0 ? worst / peak : 0.0;
}

KoopmanDecomposition decompose(const Matrix& koopman, const SnapshotMatrices& s, const FrameSequence& seq,
                               const Dictionary& dict) {
  const long m = koopman.rows();
  require(m == koopman.cols(), "decompose: Koopman matrix must be square");
  require(m == s.psi.rows(), "decompose: Koopman matrix size does not match the lift");
  require(seq.frames() == s.psi.cols() + 1, "decompose: sequence length does not match the snapshots");
  require(seq.height() == dict.height && seq.width() == dict.width, "decompose: sequence shape does not match the dictionary");

  Eigen::EigenSolver<Matrix> eig(koopman.transpose(), true);
  if (eig.info() != Eigen::Success) throw NumericalError("decompose: eigensolver failed to converge");
  const CVector lambdas = eig.eigenvalues();
  CMatrix xi = eig.eigenvectors();

  // Non-defective check: K^T must be reproduced by its eigenbasis.
  Eigen::PartialPivLU<CMatrix> lu(xi);
  const CMatrix recon = xi * lambdas.asDiagonal() * lu.inverse();
  const double knorm = std::max(koopman.norm(), std::numeric_limits<double>::min());
  const double residual = (recon - koopman.transpose().cast<Complex>()).norm() / knorm;
  if (!std::isfinite(residual) || residual > kDefectTolerance) {
    throw NumericalError("decompose: Koopman matrix is defective or ill-conditioned (relative residual " +
                             std::to_string(residual) + ")",
                         residual);
  }

  const Matrix psi_full = s.full();
  const long T = psi_full.cols();
  for (long i = 0; i < m; ++i) {
    auto col = xi.col(i);
    Eigen::Index arg = 0;
    col.cwiseAbs().maxCoeff(&arg);
    const Complex pivot = col(arg);
    if (std::abs(pivot) > 0.0) col *= std::conj(pivot) / std::abs(pivot);
    const CVector trace = psi_full.transpose().cast<Complex>() * col;
    const double rms = std::sqrt(trace.squaredNorm() / static_cast<double>(T));
    if (rms > 0.0) col /= rms;
  }

  // Frames regressed jointly onto the eigenfunctions: X ~= V Phi with
  // Phi = Xi^T Psi, hence V = (X pinv(Psi)) Xi^{-T}.
  const int P = seq.frame_size();
  Matrix frames(P, T);
  for (long t = 0; t < T; ++t) {
    const auto f = seq.frame(static_cast<int>(t));
    for (int p = 0; p < P; ++p) frames(p, t) = f[p];
  }
  const Matrix coeff = frames * pseudo_inverse(psi_full, 1e-12);  // P x m
  const CMatrix modes_t = Eigen::PartialPivLU<CMatrix>(xi).solve(coeff.transpose().cast<Complex>());  // m x P

  KoopmanDecomposition dec;
  dec.view = seq.view();
  dec.height = seq.height();
  dec.width = seq.width();
  dec.dt = s.dt;
  dec.modes.reserve(m);
  for (long i = 0; i < m; ++i) {
    KoopmanMode mode;
    mode.lambda = lambdas(i);
    mode.mu = std::abs(mode.lambda) > 0.0
                  ? continuous_eigen(mode.lambda, s.dt)
                  : Complex(-std::numeric_limits<double>::infinity(), 0.0);
    mode.xi = xi.col(i);
    mode.phi_trace = psi_full.transpose().cast<Complex>() * mode.xi;

    const CVector v = modes_t.row(i).transpose();
    const Complex sq = v.transpose() * v;  // sum v_p^2, unconjugated
    const double theta = -0.5 * std::arg(sq);
    Vector field = (v * std::polar(1.0, theta)).real();
    Eigen::Index arg = 0;
    field.cwiseAbs().maxCoeff(&arg);
    if (field.size() && field(arg) < 0.0) field = -field;
    mode.mode_field = std::move(field);
    mode.energy = mode.phi_trace.squaredNorm() / static_cast<double>(T) * mode.mode_field.squaredNorm();
    dec.modes.push_back(std::move(mode));
  }
  std::stable_sort(dec.modes.begin(), dec.modes.end(), [](const KoopmanMode& a, const KoopmanMode& b) {
    if (a.energy != b.energy) return a.energy > b.energy;
    if (std::abs(a.lambda) != std::abs(b.lambda)) return std::abs(a.lambda) > std::abs(b.lambda);
    return a.lambda.imag() > b.lambda.imag();
  });
  return dec;
}

KoopmanDecomposition filter_modes(const KoopmanDecomposition& dec, const FilterConfig& cfg) {
  require(cfg.energy_floor >= 0.0 && cfg.modulus_floor >= 0.0 && cfg.k_max >= 1, "filter_modes: invalid config");
  KoopmanDecomposition out = dec;
  out.modes.clear();
  double max_energy = 0.0;
  for (const auto& m : dec.modes) max_energy = std::max(max_energy, m.energy);

  std::vector<const KoopmanMode*> kept;
  for (const auto& m : dec.modes) {
    if (m.energy >= cfg.energy_floor * max_energy && std::abs(m.lambda) >= cfg.modulus_floor) kept.push_back(&m);
  }

  std::vector<bool> consumed(kept.size(), false);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    if (consumed[i]) continue;
    const KoopmanMode& a = *kept[i];
    if (is_real(a.lambda)) {
      out.modes.push_back(a);
      continue;
    }
    // Find the conjugate partner among the remaining survivors.
    std::size_t partner = kept.size();
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      if (!consumed[j] &&
          std::abs(kept[j]->lambda - std::conj(a.lambda)) <= kPairTolerance * std::max(1.0, std::abs(a.lambda))) {
        partner = j;
        break;
      }
    }
    const KoopmanMode* rep = &a;
    if (partner < kept.size()) {
      consumed[partner] = true;
      if (kept[partner]->lambda.imag() > a.lambda.imag()) rep = kept[partner];
    }
    KoopmanMode collapsed = *rep;
    if (collapsed.lambda.imag() < 0.0) {
      collapsed.lambda = std::conj(collapsed.lambda);
      collapsed.mu = std::conj(collapsed.mu);
      collapsed.xi = collapsed.xi.conjugate();
      collapsed.phi_trace = collapsed.phi_trace.conjugate();
    }
    collapsed.energy = 2.0 * rep->energy;
    out.modes.push_back(std::move(collapsed));
  }

  std::stable_sort(out.modes.begin(), out.modes.end(),
                   [](const KoopmanMode& a, const KoopmanMode& b) { return a.energy > b.energy; });
  if (static_cast<int>(out.modes.size()) > cfg.k_max) out.modes.resize(cfg.k_max);
  out.degenerate = out.modes.empty();
  return out;
}

KoopmanDecomposition run_edmd(const FrameSequence& seq, const Dictionary& dict, const FilterConfig& filter,
                              double rcond) {
  const SnapshotMatrices s = lift(seq, dict);
  const Matrix k = koopman_matrix(s, rcond);
  return filter_modes(decompose(k, s, seq, dict), filter);
}

// --- Serialization ----------------------------------------------------------

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

nlohmann::ordered_json complex_json(Complex z) {
  auto part = [](double v) -> nlohmann::ordered_json {
    if (std::isfinite(v)) return v;
    return nullptr;
  };
  return nlohmann::ordered_json::array({part(z.real()), part(z.imag())});
}
}  // namespace

std::string base64_encode(std::string_view bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += kB64[(v >> 6) & 63];
    out += kB64[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (rest == 2) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kB64[(v >> 18) & 63];
    out += kB64[(v >> 12) & 63];
    out += rest == 2 ? kB64[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::string base64_decode(std::string_view text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw FormatError("base64: length is not a multiple of 4");
  std::string out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      if (text[i + k] == '=') {
        v[k] = 0;
        ++pad;
      } else {
        v[k] = value(text[i + k]);
        if (v[k] < 0 || pad) throw FormatError("base64: invalid character");
      }
    }
    const unsigned w = (v[0] << 18) | (v[1] << 12) | (v[2] << 6) | v[3];
    out += static_cast<char>((w >> 16) & 255);
    if (pad < 2) out += static_cast<char>((w >> 8) & 255);
    if (pad < 1) out += static_cast<char>(w & 255);
  }
  return out;
}

nlohmann::ordered_json to_json(const KoopmanDecomposition& dec) {
  nlohmann::ordered_json doc;
  doc["view"] = std::string(to_string(dec.view));
  doc["height"] = dec.height;
  doc["width"] = dec.width;
  doc["dt"] = dec.dt;
  doc["degenerate"] = dec.degenerate;
  auto modes = nlohmann::ordered_json::array();
  for (const auto& m : dec.modes) {
    nlohmann::ordered_json jm;
    jm["lambda"] = complex_json(m.lambda);
    jm["mu"] = complex_json(m.mu);
    jm["energy"] = m.energy;
    auto xi = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < m.xi.size(); ++i) xi.push_back(complex_json(m.xi(i)));
    jm["xi"] = std::move(xi);
    auto phi = nlohmann::ordered_json::array();
    for (Eigen::Index i = 0; i < m.phi_trace.size(); ++i) phi.push_back(complex_json(m.phi_trace(i)));
    jm["phi_trace"] = std::move(phi);
    std::string raw(static_cast<std::size_t>(m.mode_field.size()) * sizeof(float), '\0');
    for (Eigen::Index i = 0; i < m.mode_field.size(); ++i) {
      const float f = static_cast<float>(m.mode_field(i));
      std::memcpy(raw.data() + i * sizeof(float), &f, sizeof(float));
    }
    jm["mode_field"] = base64_encode(raw);
    modes.push_back(std::move(jm));
  }
  doc["modes"] = std::move(modes);
  return doc;
}

}  // namespace koopscore
