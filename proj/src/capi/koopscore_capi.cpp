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

#include "koopscore/koopscore.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "error.hpp"
#include "model.hpp"
#include "pipeline.hpp"
#include "sequence.hpp"

struct ks_config {
  koopscore::PipelineConfig cfg;
};
struct ks_sequence {
  koopscore::FrameSequence seq;
  std::string view;
};
struct ks_model {
  koopscore::RiskModel model;
};

namespace {

thread_local std::string g_last_error;

ks_status fail(ks_status status, const std::string& msg) {
  g_last_error = msg;
  return status;
}

template <typename Fn>
ks_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return KS_OK;
  } catch (const koopscore::Error& e) {
    return fail(static_cast<ks_status>(e.code()), e.what());
  } catch (const std::bad_alloc&) {
    return fail(KS_ERR_INTERNAL, "out of memory");
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(KS_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(KS_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(KS_ERR_INTERNAL, "unknown error");
  }
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* name) {
  if (!p) throw koopscore::ValidationError(std::string(name) + " must not be NULL");
}

std::string opt(const char* s) { return s ? s : ""; }

}  // namespace

extern "C" {

const char* ks_version(void) { return "1.0.0"; }

const char* ks_last_error(void) { return g_last_error.c_str(); }

void ks_string_free(char* s) { std::free(s); }

ks_status ks_config_default(ks_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new ks_config{};
  });
}

ks_status ks_config_load(const char* path, ks_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ks_config{koopscore::load_config(path)};
  });
}

ks_status ks_config_parse(const char* json_text, ks_config** out) {
  return guarded([&] {
    need(json_text, "json_text");
    need(out, "out");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception& e) {
      throw koopscore::ValidationError(std::string("config: malformed JSON: ") + e.what());
    }
    *out = new ks_config{koopscore::parse_config(j)};
  });
}

ks_status ks_config_set_seed(ks_config* cfg, uint64_t seed) {
  return guarded([&] {
    need(cfg, "cfg");
    cfg->cfg.set_seed(seed);
  });
}

ks_status ks_config_set_threshold(ks_config* cfg, double threshold) {
  return guarded([&] {
    need(cfg, "cfg");
    koopscore::require(threshold >= 0.0 && threshold <= 1.0, "threshold must lie in [0,1]");
    cfg->cfg.evaluation.classification_threshold = threshold;
  });
}

ks_status ks_config_to_json(const ks_config* cfg, char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_json, "out_json");
    *out_json = dup_string(koopscore::config_to_json(cfg->cfg).dump(2));
  });
}

void ks_config_free(ks_config* cfg) { delete cfg; }

ks_status ks_sequence_load(const char* path, ks_sequence** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    koopscore::FrameSequence seq = koopscore::load_sequence(path);
    std::string view(koopscore::to_string(seq.view()));
    *out = new ks_sequence{std::move(seq), std::move(view)};
  });
}

ks_status ks_sequence_save(const ks_sequence* seq, const char* path) {
  return guarded([&] {
    need(seq, "seq");
    need(path, "path");
    koopscore::save_sequence(seq->seq, path);
  });
}

ks_status ks_sequence_shape(const ks_sequence* seq, int* frames, int* height, int* width, double* dt) {
  return guarded([&] {
    need(seq, "seq");
    if (frames) *frames = seq->seq.frames();
    if (height) *height = seq->seq.height();
    if (width) *width = seq->seq.width();
    if (dt) *dt = seq->seq.dt();
  });
}

const char* ks_sequence_view(const ks_sequence* seq) { return seq ? seq->view.c_str() : ""; }

const char* ks_sequence_patient(const ks_sequence* seq) { return seq ? seq->seq.patient_id().c_str() : ""; }

ks_status ks_sequence_pixels(const ks_sequence* seq, float* out, size_t count) {
  return guarded([&] {
    need(seq, "seq");
    need(out, "out");
    const auto px = seq->seq.pixels();
    koopscore::require(count == px.size(), "pixel buffer holds " + std::to_string(count) + " values, sequence has " +
                                               std::to_string(px.size()));
    std::memcpy(out, px.data(), px.size() * sizeof(float));
  });
}

void ks_sequence_free(ks_sequence* seq) { delete seq; }

ks_status ks_model_load(const char* path, ks_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ks_model{koopscore::load_model(path)};
  });
}

ks_status ks_model_describe(const ks_model* model, char** out_json) {
  return guarded([&] {
    need(model, "model");
    need(out_json, "out_json");
    *out_json = dup_string(koopscore::describe_model(model->model).dump(2));
  });
}

void ks_model_free(ks_model* model) { delete model; }

ks_status ks_synth(const ks_config* cfg, int n, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out_dir, "out_dir");
    koopscore::cmd_synth(cfg->cfg, n, out_dir);
  });
}

ks_status ks_train(const ks_config* cfg, const char* manifest, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(manifest, "manifest");
    need(out_dir, "out_dir");
    koopscore::cmd_train(cfg->cfg, manifest, out_dir);
  });
}

ks_status ks_score(const ks_config* cfg, const char* model_path, const char* manifest, const char* split,
                   const char* patient, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(model_path, "model_path");
    need(manifest, "manifest");
    need(out_dir, "out_dir");
    koopscore::cmd_score(cfg->cfg, model_path, manifest, split ? split : "all", opt(patient), out_dir);
  });
}

ks_status ks_evaluate(const ks_config* cfg, const char* scores_csv, const char* out_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(scores_csv, "scores_csv");
    need(out_dir, "out_dir");
    koopscore::cmd_evaluate(cfg->cfg, scores_csv, out_dir);
  });
}

ks_status ks_decompose(const ks_config* cfg, const char* sequence_path, const char* model_path, const char* out_path,
                       char** out_json) {
  return guarded([&] {
    need(cfg, "cfg");
    need(sequence_path, "sequence_path");
    const auto j = koopscore::cmd_decompose(cfg->cfg, sequence_path, opt(model_path), opt(out_path));
    if (out_json) *out_json = dup_string(j.dump(2));
  });
}

}  // extern "C"
