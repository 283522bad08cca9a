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

#include "sequence.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "error.hpp"
#include "json.hpp"

namespace koopscore {

namespace {

constexpr std::string_view kSequenceMagic = "KSQ1";
constexpr std::array<std::string_view, kNumViews> kViewNames = {"PLAX", "PSAX-MP", "PSAX-AV", "A4C", "A2C"};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

}  // namespace

std::string_view to_string(ViewLabel v) { return kViewNames.at(static_cast<std::size_t>(v)); }

ViewLabel parse_view(std::string_view name) {
  for (int i = 0; i < kNumViews; ++i) {
    if (kViewNames[i] == name) return static_cast<ViewLabel>(i);
  }
  throw ValidationError("unknown view label '" + std::string(name) + "'");
}

FrameSequence::FrameSequence(int frames, int height, int width, double dt, ViewLabel view, std::string patient_id,
                             std::vector<float> pixels)
    : frames_(frames),
      height_(height),
      width_(width),
      dt_(dt),
      view_(view),
      patient_id_(std::move(patient_id)),
      pixels_(std::move(pixels)) {
  require(frames_ >= 2, "a sequence needs at least 2 frames");
  require(height_ >= 1 && width_ >= 1, "frame shape must be positive");
  require(std::isfinite(dt_) && dt_ > 0.0, "dt must be positive");
  require(pixels_.size() == static_cast<std::size_t>(frames_) * height_ * width_,
          "pixel payload does not match T*H*W");
  for (float p : pixels_) {
    if (!(p >= 0.0f && p <= 1.0f)) throw ValidationError("pixel value outside [0,1]");
  }
}

std::span<const float> FrameSequence::frame(int t) const {
  return std::span<const float>(pixels_).subspan(static_cast<std::size_t>(t) * frame_size(), frame_size());
}

void ClinicalRecord::validate() const {
  require(ef > 0.0 && ef <= 100.0, "clinical field 'ef' must lie in (0, 100]");
  require(dim > 0.0, "clinical field 'dim' must be positive");
  require(age >= 16.0, "clinical field 'age' must be at least 16");
  require(sex == 0 || sex == 1, "clinical field 'sex' must be 0 or 1");
}

void Study::validate() const {
  require(!sequences.empty(), "study " + patient_id + " has no views");
  for (const auto& [view, seq] : sequences) {
    require(seq.view() == view, "study " + patient_id + " stores a sequence under the wrong view");
  }
  if (clinical) clinical->validate();
  if (label) require(*label == 0 || *label == 1, "label must be 0 or 1");
}

// --- Container I/O ----------------------------------------------------------

std::string encode_sequence(const FrameSequence& seq) {
  nlohmann::ordered_json header;
  header["T"] = seq.frames();
  header["H"] = seq.height();
  header["W"] = seq.width();
  header["dt"] = seq.dt();
  header["view"] = std::string(to_string(seq.view()));
  header["patient_id"] = seq.patient_id();

  std::string out(kSequenceMagic);
  out += header.dump();
  out += '\n';
  const auto px = seq.pixels();
  const std::size_t offset = out.size();
  out.resize(offset + px.size() * sizeof(float));
  std::memcpy(out.data() + offset, px.data(), px.size() * sizeof(float));
  return out;
}

FrameSequence decode_sequence(std::string_view bytes) {
  if (bytes.substr(0, kSequenceMagic.size()) != kSequenceMagic) {
    throw FormatError("sequence container: bad magic bytes");
  }
  const std::size_t eol = bytes.find('\n', kSequenceMagic.size());
  if (eol == std::string_view::npos) throw FormatError("sequence container: unterminated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kSequenceMagic.size(), eol - kSequenceMagic.size()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sequence container: malformed header: ") + e.what());
  }

  int frames = 0, height = 0, width = 0;
  double dt = 0.0;
  std::string view, patient;
  try {
    frames = header.at("T").get<int>();
    height = header.at("H").get<int>();
    width = header.at("W").get<int>();
    dt = header.at("dt").get<double>();
    view = header.at("view").get<std::string>();
    patient = header.at("patient_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("sequence container: header field error: ") + e.what());
  }
  if (frames < 0 || height < 0 || width < 0) throw FormatError("sequence container: negative shape");

  const std::size_t count = static_cast<std::size_t>(frames) * height * width;
  const std::string_view payload = bytes.substr(eol + 1);
  if (payload.size() != count * sizeof(float)) {
    throw FormatError("sequence container: truncated or oversized payload (expected " +
                      std::to_string(count * sizeof(float)) + " bytes, found " + std::to_string(payload.size()) + ")");
  }
  std::vector<float> pixels(count);
  std::memcpy(pixels.data(), payload.data(), payload.size());
  return FrameSequence(frames, height, width, dt, parse_view(view), std::move(patient), std::move(pixels));
}

FrameSequence load_sequence(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open sequence file " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_sequence(bytes);
}

void save_sequence(const FrameSequence& seq, const std::filesystem::path& path) {
  const std::string bytes = encode_sequence(seq);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write sequence file " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

// --- Enhancement ------------------------------------------------------------

std::vector<float> resize_bilinear(std::span<const float> src, int height, int width, int out_height,
                                   int out_width) {
  std::vector<float> out(static_cast<std::size_t>(out_height) * out_width);
  const double sy = out_height > 1 ? static_cast<double>(height - 1) / (out_height - 1) : 0.0;
  const double sx = out_width > 1 ? static_cast<double>(width - 1) / (out_width - 1) : 0.0;
  for (int y = 0; y < out_height; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(std::floor(fy)), height - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_width; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(std::floor(fx)), width - 1);
      const int x1 = std::min(x0 + 1, width - 1);
      const double wx = fx - x0;
      const double top = (1.0 - wx) * src[y0 * width + x0] + wx * src[y0 * width + x1];
      const double bottom = (1.0 - wx) * src[y1 * width + x0] + wx * src[y1 * width + x1];
      const double v = (1.0 - wy) * top + wy * bottom;
      out[static_cast<std::size_t>(y) * out_width + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  return out;
}

namespace {

// Separable box filter with edge clamping.
std::vector<float> box_blur(std::span<const float> src, int height, int width, int size) {
  const int radius = size / 2;
  std::vector<double> tmp(src.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += src[y * width + std::clamp(x + k, 0, width - 1)];
      tmp[y * width + x] = acc / size;
    }
  }
  std::vector<float> out(src.size());
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += tmp[std::clamp(y + k, 0, height - 1) * width + x];
      out[y * width + x] = static_cast<float>(std::clamp(acc / size, 0.0, 1.0));
    }
  }
  return out;
}

}  // namespace

FrameSequence enhance(const FrameSequence& seq, const EnhanceConfig& cfg) {
  require(cfg.height >= 2 && cfg.width >= 2, "enhance: target resolution must be at least 2x2");
  require(cfg.blur_size >= 1 && cfg.blur_size % 2 == 1, "enhance: blur_size must be odd and >= 1");
  require(cfg.static_variance_floor >= 0.0, "enhance: static_variance_floor must be >= 0");

  const auto px = seq.pixels();
  const auto [lo_it, hi_it] = std::minmax_element(px.begin(), px.end());
  const float lo = *lo_it, hi = *hi_it;
  std::vector<float> norm(px.size());
  if (hi > lo) {
    if (lo == 0.0f && hi == 1.0f) {
      std::copy(px.begin(), px.end(), norm.begin());
    } else {
      const double range = static_cast<double>(hi) - lo;
      for (std::size_t i = 0; i < px.size(); ++i) {
        norm[i] = static_cast<float>(std::clamp((px[i] - static_cast<double>(lo)) / range, 0.0, 1.0));
      }
    }
  }  // constant sequences map to 0

  const int T = seq.frames(), H = seq.height(), W = seq.width();
  const std::size_t fs = static_cast<std::size_t>(H) * W;

  if (cfg.static_variance_floor > 0.0) {
    for (std::size_t p = 0; p < fs; ++p) {
      double mean = 0.0;
      for (int t = 0; t < T; ++t) mean += norm[t * fs + p];
      mean /= T;
      double var = 0.0;
      for (int t = 0; t < T; ++t) var += (norm[t * fs + p] - mean) * (norm[t * fs + p] - mean);
      var /= T;
      if (var < cfg.static_variance_floor) {
        for (int t = 0; t < T; ++t) norm[t * fs + p] = 0.0f;
      }
    }
  }

  const bool resize = (cfg.height != H || cfg.width != W);
  if (cfg.blur_size == 1 && !resize) {
    return FrameSequence(T, H, W, seq.dt(), seq.view(), seq.patient_id(), std::move(norm));
  }

  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(T) * cfg.height * cfg.width);
  for (int t = 0; t < T; ++t) {
    std::span<const float> frame(norm.data() + t * fs, fs);
    std::vector<float> blurred;
    if (cfg.blur_size > 1) {
      blurred = box_blur(frame, H, W, cfg.blur_size);
      frame = blurred;
    }
    if (resize) {
      const auto r = resize_bilinear(frame, H, W, cfg.height, cfg.width);
      out.insert(out.end(), r.begin(), r.end());
    } else {
      out.insert(out.end(), frame.begin(), frame.end());
    }
  }
  return FrameSequence(T, cfg.height, cfg.width, seq.dt(), seq.view(), seq.patient_id(), std::move(out));
}

FrameSequence normalize_cycle(const FrameSequence& seq, int target_frames) {
  require(target_frames >= 2, "normalize_cycle: target frame count must be >= 2");
  const int T = seq.frames();
  if (target_frames == T) return seq;

  const std::size_t fs = seq.frame_size();
  std::vector<float> out(static_cast<std::size_t>(target_frames) * fs);
  for (int j = 0; j < target_frames; ++j) {
    // Position in input frame-index units; products are exact integers.
    const double pos = static_cast<double>(static_cast<long long>(j) * (T - 1)) / (target_frames - 1);
    int i0 = static_cast<int>(std::floor(pos));
    if (j == target_frames - 1) i0 = T - 1;
    const double w = (j == target_frames - 1) ? 0.0 : pos - i0;
    const auto f0 = seq.frame(i0);
    float* dst = out.data() + j * fs;
    if (w == 0.0) {
      std::copy(f0.begin(), f0.end(), dst);
      continue;
    }
    const auto f1 = seq.frame(std::min(i0 + 1, T - 1));
    for (std::size_t p = 0; p < fs; ++p) {
      const double v = (1.0 - w) * f0[p] + w * f1[p];
      dst[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  }
  const double dt = (T - 1) * seq.dt() / (target_frames - 1);
  return FrameSequence(target_frames, seq.height(), seq.width(), dt, seq.view(), seq.patient_id(), std::move(out));
}

}  // namespace koopscore
