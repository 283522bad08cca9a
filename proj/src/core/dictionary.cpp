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

#include "dictionary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "error.hpp"

namespace koopscore {

std::string_view to_string(DictionaryKind k) {
  switch (k) {
    case DictionaryKind::kPcaLinear: return "pca-linear";
    case DictionaryKind::kPcaRbf: return "pca-rbf";
    case DictionaryKind::kPcaPoly: return "pca-poly";
  }
  return "pca-linear";
}

DictionaryKind parse_dictionary_kind(std::string_view name) {
  if (name == "pca-linear") return DictionaryKind::kPcaLinear;
  if (name == "pca-rbf") return DictionaryKind::kPcaRbf;
  if (name == "pca-poly") return DictionaryKind::kPcaPoly;
  throw ValidationError("unknown dictionary kind '" + std::string(name) + "'");
}

namespace {

using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajorF> frames_of(const FrameSequence& s) {
  return Eigen::Map<const RowMajorF>(s.pixels().data(), s.frames(), s.frame_size());
}

// Mean-centred frame matrix (N x P) assembled lazily from the sequences.
class FramePool {
 public:
  explicit FramePool(std::span<const FrameSequence* const> seqs) : seqs_(seqs) {
    require(!seqs_.empty(), "fit_dictionary: no training sequences");
    pixels_ = seqs_.front()->frame_size();
    mean_ = Vector::Zero(pixels_);
    for (const FrameSequence* s : seqs_) {
      require(s->height() == seqs_.front()->height() && s->width() == seqs_.front()->width(),
              "fit_dictionary: training sequences differ in frame shape");
      frames_ += s->frames();
      mean_ += frames_of(*s).cast<double>().colwise().sum().transpose();
    }
    mean_ /= static_cast<double>(frames_);
  }

  long frames() const { return frames_; }
  int pixels() const { return pixels_; }
  const Vector& mean() const { return mean_; }

  Matrix block(const FrameSequence& s) const {
    return frames_of(s).cast<double>().rowwise() - mean_.transpose();
  }

  Matrix dense() const {
    Matrix out(frames_, pixels_);
    long row = 0;
    for (const FrameSequence* s : seqs_) {
      out.middleRows(row, s->frames()) = block(*s);
      row += s->frames();
    }
    return out;
  }

  // Xc * rhs, rhs is P x k.
  Matrix times(const Matrix& rhs) const {
    Matrix out(frames_, rhs.cols());
    long row = 0;
    for (const FrameSequence* s : seqs_) {
      out.middleRows(row, s->frames()).noalias() = block(*s) * rhs;
      row += s->frames();
    }
    return out;
  }

  // Xc^T * rhs, rhs is N x k.
  Matrix transpose_times(const Matrix& rhs) const {
    Matrix out = Matrix::Zero(pixels_, rhs.cols());
    long row = 0;
    for (const FrameSequence* s : seqs_) {
      out.noalias() += block(*s).transpose() * rhs.middleRows(row, s->frames());
      row += s->frames();
    }
    return out;
  }

  Matrix covariance() const {
    Matrix c = Matrix::Zero(pixels_, pixels_);
    for (const FrameSequence* s : seqs_) {
      const Matrix b = block(*s);
      c.selfadjointView<Eigen::Lower>().rankUpdate(b.transpose());
    }
    return c.selfadjointView<Eigen::Lower>();
  }

 private:
  std::span<const FrameSequence* const> seqs_;
  long frames_ = 0;
  int pixels_ = 0;
  Vector mean_;
};

Matrix orthonormal_columns(const Matrix& a) {
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(a.rows(), a.cols());
}

struct Pca {
  Matrix basis;  // P x k, columns ordered by decreasing variance
  Vector sigma;
};

Pca pca_gram(const FramePool& pool, int k) {
  const Matrix x = pool.dense();
  const Matrix g = x * x.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g);
  const long n = g.rows();
  Pca out{Matrix(pool.pixels(), k), Vector(k)};
  for (int i = 0; i < k; ++i) {
    const double lam = std::max(eig.eigenvalues()(n - 1 - i), 0.0);
    out.sigma(i) = std::sqrt(lam);
    const Vector dir = x.transpose() * eig.eigenvectors().col(n - 1 - i);
    const double norm = dir.norm();
    out.basis.col(i) = norm > 0.0 ? Vector(dir / norm) : Vector::Zero(pool.pixels());
  }
  return out;
}

Pca pca_covariance(const FramePool& pool, int k) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(pool.covariance());
  const long p = pool.pixels();
  Pca out{Matrix(p, k), Vector(k)};
  for (int i = 0; i < k; ++i) {
    out.sigma(i) = std::sqrt(std::max(eig.eigenvalues()(p - 1 - i), 0.0));
    out.basis.col(i) = eig.eigenvectors().col(p - 1 - i);
  }
  return out;
}

Pca pca_randomized(const FramePool& pool, int k, std::uint64_t seed) {
  constexpr int kOversample = 10;
  constexpr int kPowerIterations = 3;
  const int width = static_cast<int>(std::min<long>({static_cast<long>(k) + kOversample, pool.frames(),
                                                     static_cast<long>(pool.pixels())}));
  std::mt19937_64 rng(mix_seed(seed, 0x5ca1ab1e));
  Matrix omega(pool.pixels(), width);
  for (int j = 0; j < width; ++j)
    for (int i = 0; i < pool.pixels(); ++i) omega(i, j) = standard_normal(rng);

  Matrix q = orthonormal_columns(pool.times(omega));
  for (int it = 0; it < kPowerIterations; ++it) {
    const Matrix z = orthonormal_columns(pool.transpose_times(q));
    q = orthonormal_columns(pool.times(z));
  }
  const Matrix bt = pool.transpose_times(q);  // P x width, equals (Q^T Xc)^T
  Eigen::JacobiSVD<Matrix> svd(bt, Eigen::ComputeThinU);
  Pca out{svd.matrixU().leftCols(k), svd.singularValues().head(k)};
  return out;
}

std::vector<std::vector<int>> poly_monomials(int rank, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  // Nondecreasing index multisets, grouped by total degree.
  for (int d = 0; d <= degree; ++d) {
    cur.assign(d, 0);
    if (d == 0) {
      out.push_back({});
      continue;
    }
    if (rank == 0) break;
    while (true) {
      out.push_back(cur);
      int pos = d - 1;
      while (pos >= 0 && cur[pos] == rank - 1) --pos;
      if (pos < 0) break;
      ++cur[pos];
      for (int q = pos + 1; q < d; ++q) cur[q] = cur[pos];
    }
  }
  return out;
}

Matrix kmeans(const Matrix& points /* n x r */, int k, std::uint64_t seed) {
  const long n = points.rows();
  std::mt19937_64 rng(mix_seed(seed, 0xc3a7e125));
  Matrix centers(k, points.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  long first = std::min<long>(static_cast<long>(uniform01(rng) * n), n - 1);
  centers.row(0) = points.row(first);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (long i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points.row(i) - centers.row(c - 1)).squaredNorm());
      total += d2[i];
    }
    long pick = n - 1;
    if (total > 0.0) {
      double target = uniform01(rng) * total;
      for (long i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      pick = std::min<long>(static_cast<long>(uniform01(rng) * n), n - 1);
    }
    centers.row(c) = points.row(pick);
  }

  std::vector<int> assign(n, -1);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (long i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Matrix sums = Matrix::Zero(k, points.cols());
    std::vector<long> counts(k, 0);
    for (long i = 0; i < n; ++i) {
      sums.row(assign[i]) += points.row(i);
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) centers.row(c) = sums.row(c) / static_cast<double>(counts[c]);
    }
  }
  return centers;
}

}  // namespace

int Dictionary::size() const {
  switch (kind) {
    case DictionaryKind::kPcaLinear: return rank + 1;
    case DictionaryKind::kPcaRbf: return rank + 1 + static_cast<int>(centers.rows());
    case DictionaryKind::kPcaPoly: return static_cast<int>(poly_monomials(rank, degree).size());
  }
  return rank + 1;
}

std::vector<std::vector<int>> Dictionary::monomials() const { return poly_monomials(rank, degree); }

Vector Dictionary::coefficients(std::span<const float> frame) const {
  require(static_cast<int>(frame.size()) == pixels(), "dictionary: frame size does not match the fitted basis");
  const Eigen::Map<const Eigen::VectorXf> x(frame.data(), static_cast<long>(frame.size()));
  return components * (x.cast<double>() - mean);
}

Vector Dictionary::lift(const Vector& c) const {
  switch (kind) {
    case DictionaryKind::kPcaLinear: {
      Vector out(rank + 1);
      out(0) = 1.0;
      out.tail(rank) = c;
      return out;
    }
    case DictionaryKind::kPcaRbf: {
      const long nc = centers.rows();
      Vector out(rank + 1 + nc);
      out(0) = 1.0;
      out.segment(1, rank) = c;
      const double denom = 2.0 * rbf_width * rbf_width;
      for (long k = 0; k < nc; ++k) out(rank + 1 + k) = std::exp(-(c.transpose() - centers.row(k)).squaredNorm() / denom);
      return out;
    }
    case DictionaryKind::kPcaPoly: {
      const auto monos = poly_monomials(rank, degree);
      Vector out(monos.size());
      for (std::size_t j = 0; j < monos.size(); ++j) {
        double v = 1.0;
        for (int idx : monos[j]) v *= c(idx);
        out(static_cast<long>(j)) = v;
      }
      return out;
    }
  }
  return {};
}

Dictionary fit_dictionary(std::span<const FrameSequence> training, const DictConfig& cfg) {
  std::vector<const FrameSequence*> ptrs;
  ptrs.reserve(training.size());
  for (const auto& s : training) ptrs.push_back(&s);
  return fit_dictionary(std::span<const FrameSequence* const>(ptrs), cfg);
}

Dictionary fit_dictionary(std::span<const FrameSequence* const> training, const DictConfig& cfg) {
  require(cfg.rank >= 1, "fit_dictionary: rank must be >= 1");
  if (cfg.kind == DictionaryKind::kPcaRbf) require(cfg.n_centers >= 1, "fit_dictionary: n_centers must be >= 1");
  if (cfg.kind == DictionaryKind::kPcaPoly) require(cfg.degree >= 1, "fit_dictionary: degree must be >= 1");

  const FramePool pool(training);
  const long n = pool.frames();
  const int p = pool.pixels();
  const int k = static_cast<int>(std::min<long>({static_cast<long>(cfg.rank), n, static_cast<long>(p)}));

  Pca pca;
  if (n <= kExactPcaLimit && n <= p) {
    pca = pca_gram(pool, k);
  } else if (p <= kExactPcaLimit) {
    pca = pca_covariance(pool, k);
  } else {
    pca = pca_randomized(pool, k, cfg.seed);
  }

  int rank = 0;
  const double smax = pca.sigma.size() ? pca.sigma(0) : 0.0;
  while (rank < k && smax > 0.0 && pca.sigma(rank) > kRankTolerance * smax) ++rank;
  if (rank == 0) {
    // Constant data: keep a single (arbitrary) direction so the lift is well formed.
    rank = 1;
    pca.basis.col(0) = Vector::Unit(p, 0);
  }

  Matrix basis = orthonormal_columns(pca.basis.leftCols(rank));
  for (int i = 0; i < rank; ++i) {
    if (basis.col(i).dot(pca.basis.col(i)) < 0.0) basis.col(i) *= -1.0;
    Eigen::Index arg = 0;
    basis.col(i).cwiseAbs().maxCoeff(&arg);
    if (basis(arg, i) < 0.0) basis.col(i) *= -1.0;
  }

  Dictionary dict;
  dict.kind = cfg.kind;
  dict.height = training.front()->height();
  dict.width = training.front()->width();
  dict.rank = rank;
  dict.rank_reduced = rank < cfg.rank;
  dict.mean = pool.mean();
  dict.components = basis.transpose();
  dict.degree = cfg.kind == DictionaryKind::kPcaPoly ? cfg.degree : 1;

  if (cfg.kind == DictionaryKind::kPcaRbf) {
    const Matrix coeffs = pool.times(basis);  // n x rank
    const int nc = static_cast<int>(std::min<long>(cfg.n_centers, n));
    dict.centers = kmeans(coeffs, nc, cfg.seed);
    std::vector<double> dists;
    for (int a = 0; a < nc; ++a)
      for (int b = a + 1; b < nc; ++b) dists.push_back((dict.centers.row(a) - dict.centers.row(b)).norm());
    double width = 1.0;
    if (!dists.empty()) {
      std::sort(dists.begin(), dists.end());
      const std::size_t m = dists.size();
      width = m % 2 ? dists[m / 2] : 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
      if (!(width > 0.0)) width = 1.0;
    }
    dict.rbf_width = width;
  }
  return dict;
}

}  // namespace koopscore
