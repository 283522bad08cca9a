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

#include <cmath>
#include <complex>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sequence.hpp"

namespace kstest {

/// Fresh scratch directory under the build tree.
inline std::filesystem::path scratch(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(KS_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline koopscore::FrameSequence make_seq(int frames, int h, int w, const std::vector<float>& px, double dt = 0.02,
                                         koopscore::ViewLabel view = koopscore::ViewLabel::kPLAX,
                                         const std::string& id = "P") {
  return koopscore::FrameSequence(frames, h, w, dt, view, id, px);
}

/// Frames x_t = offset + sum_k coeff[k](t) * pattern_k (double precision in,
/// float32 out), returned unnormalized.
inline std::vector<float> compose(const std::vector<std::vector<double>>& coeff,
                                  const std::vector<std::vector<double>>& patterns, double offset) {
  const std::size_t T = coeff.front().size(), P = patterns.front().size();
  std::vector<float> out(T * P);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t p = 0; p < P; ++p) {
      double v = offset;
      for (std::size_t k = 0; k < patterns.size(); ++k) v += coeff[k][t] * patterns[k][p];
      out[t * P + p] = static_cast<float>(v);
    }
  return out;
}

/// Smallest achievable max |estimate - truth| over one-to-one assignments of
/// every truth value to a distinct estimate (brute force, small sets only).
inline double match_error(const std::vector<std::complex<double>>& truth,
                          const std::vector<std::complex<double>>& estimate) {
  if (truth.size() > estimate.size()) return INFINITY;
  double best = INFINITY;
  std::vector<int> used(estimate.size(), 0);
  auto rec = [&](auto&& self, std::size_t i, double worst) -> void {
    if (worst >= best) return;
    if (i == truth.size()) {
      best = worst;
      return;
    }
    for (std::size_t j = 0; j < estimate.size(); ++j) {
      if (used[j]) continue;
      used[j] = 1;
      self(self, i + 1, std::max(worst, std::abs(truth[i] - estimate[j])));
      used[j] = 0;
    }
  };
  rec(rec, 0, 0.0);
  return best;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace kstest
