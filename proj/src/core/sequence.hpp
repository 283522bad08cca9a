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

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace koopscore {

enum class ViewLabel : int { kPLAX = 0, kPSAX_MP = 1, kPSAX_AV = 2, kA4C = 3, kA2C = 4 };

inline constexpr int kNumViews = 5;
inline constexpr std::array<ViewLabel, kNumViews> kAllViews = {
    ViewLabel::kPLAX, ViewLabel::kPSAX_MP, ViewLabel::kPSAX_AV, ViewLabel::kA4C, ViewLabel::kA2C};

std::string_view to_string(ViewLabel v);
/// Throws ValidationError for anything outside the five standard views.
ViewLabel parse_view(std::string_view name);

/// Temporally ordered stack of T frames of H x W intensities in [0,1], stored
/// t-major then row-major as 32-bit floats (the on-disk precision).
class FrameSequence {
 public:
  FrameSequence() = default;
  FrameSequence(int frames, int height, int width, double dt, ViewLabel view, std::string patient_id,
                std::vector<float> pixels);

  int frames() const { return frames_; }
  int height() const { return height_; }
  int width() const { return width_; }
  int frame_size() const { return height_ * width_; }
  double dt() const { return dt_; }
  ViewLabel view() const { return view_; }
  const std::string& patient_id() const { return patient_id_; }

  std::span<const float> pixels() const { return pixels_; }
  std::span<const float> frame(int t) const;
  float at(int t, int y, int x) const { return pixels_[(static_cast<std::size_t>(t) * height_ + y) * width_ + x]; }

  bool operator==(const FrameSequence&) const = default;

 private:
  int frames_ = 0;
  int height_ = 0;
  int width_ = 0;
  double dt_ = 0.0;
  ViewLabel view_ = ViewLabel::kPLAX;
  std::string patient_id_;
  std::vector<float> pixels_;
};

struct ClinicalRecord {
  double ef = 0.0;   // ejection fraction, percent
  double dim = 0.0;  // ventricular dimension, mm
  double age = 0.0;  // years
  int sex = 0;       // 0 male, 1 female

  std::array<double, 4> as_array() const { return {ef, dim, age, static_cast<double>(sex)}; }
  void validate() const;
  bool operator==(const ClinicalRecord&) const = default;
};

struct Study {
  std::string patient_id;
  std::map<ViewLabel, FrameSequence> sequences;
  std::optional<ClinicalRecord> clinical;
  std::optional<int> label;

  void validate() const;
};

// --- Container I/O ----------------------------------------------------------

/// Reads a KSQ1 container: "KSQ1", one JSON header line, then T*H*W
/// little-endian float32 values.
FrameSequence load_sequence(const std::filesystem::path& path);
void save_sequence(const FrameSequence& seq, const std::filesystem::path& path);

std::string encode_sequence(const FrameSequence& seq);
FrameSequence decode_sequence(std::string_view bytes);

// --- Enhancement and temporal normalization ----------------------------------

struct EnhanceConfig {
  int height = 64;
  int width = 64;
  /// Box-blur kernel width; must be odd, 1 disables.
  int blur_size = 1;
  /// Pixels whose temporal variance falls below this floor are zeroed
  /// (static overlays). 0 disables.
  double static_variance_floor = 0.0;
};

/// Per-sequence min-max to [0,1], then static-pixel masking, box blur and
/// align-corners bilinear resize to (height, width).
FrameSequence enhance(const FrameSequence& seq, const EnhanceConfig& cfg);

/// Linear resampling in time to exactly `target_frames` frames spanning the
/// same interval; endpoints are preserved bit-exactly.
FrameSequence normalize_cycle(const FrameSequence& seq, int target_frames);

/// Bilinear sample with align-corners convention, exposed for tests.
std::vector<float> resize_bilinear(std::span<const float> src, int height, int width, int out_height,
                                   int out_width);

}  // namespace koopscore
