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

// Command-line front end. Talks to the library only through the C API.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "koopscore/koopscore.h"

namespace {

// Exit codes: 0 success, 1 validation, 2 I/O (including unreadable or
// incompatible files), 3 numerical or internal failure.
int exit_code(ks_status s) {
  switch (s) {
    case KS_OK: return 0;
    case KS_ERR_VALIDATION: return 1;
    case KS_ERR_IO:
    case KS_ERR_FORMAT:
    case KS_ERR_INCOMPATIBLE: return 2;
    default: return 3;
  }
}

int report(ks_status s) {
  if (s != KS_OK) std::fprintf(stderr, "koopscore: error: %s\n", ks_last_error());
  return exit_code(s);
}

struct ConfigDeleter {
  void operator()(ks_config* c) const { ks_config_free(c); }
};
using ConfigPtr = std::unique_ptr<ks_config, ConfigDeleter>;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> threshold;
};

ks_status make_config(const Common& c, ConfigPtr& out) {
  ks_config* raw = nullptr;
  ks_status s = c.config.empty() ? ks_config_default(&raw) : ks_config_load(c.config.c_str(), &raw);
  if (s != KS_OK) return s;
  out.reset(raw);
  if (c.seed) s = ks_config_set_seed(raw, *c.seed);
  if (s == KS_OK && c.threshold) s = ks_config_set_threshold(raw, *c.threshold);
  return s;
}

void add_common(CLI::App* cmd, Common& c, bool with_threshold) {
  cmd->add_option("--config", c.config, "Pipeline configuration JSON")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Override the configured seed");
  if (with_threshold)
    cmd->add_option("--threshold", c.threshold, "Override the classification threshold")->check(CLI::Range(0.0, 1.0));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"koopscore: Koopman-mode risk scoring of image sequences"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(ks_version()));

  Common c;
  std::string out, manifest = "data/manifest.json", model = "model/model.krm", scores = "scores/scores.csv";
  std::string split = "all", patient, sequence;
  int n = -1;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic cohort (sequences, manifest, oracle table)");
  add_common(synth, c, false);
  synth->add_option("--out", out, "Output directory (default: data)");
  synth->add_option("--n", n, "Number of patients (default: from config)")->check(CLI::NonNegativeNumber);

  auto* train = app.add_subcommand("train", "Cross-validate and train a model from a manifest");
  add_common(train, c, true);
  train->add_option("--manifest", manifest, "Cohort manifest")->capture_default_str();
  train->add_option("--out", out, "Output directory (default: model)");

  auto* score = app.add_subcommand("score", "Score the studies of a manifest with a trained model");
  add_common(score, c, false);
  score->add_option("--model", model, "Model file")->capture_default_str();
  score->add_option("--manifest", manifest, "Cohort manifest")->capture_default_str();
  score->add_option("--split", split, "Patients to score")->check(CLI::IsMember({"all", "train", "test"}))->capture_default_str();
  score->add_option("--patient", patient, "Score a single patient id");
  score->add_option("--out", out, "Output directory (default: scores)");

  auto* evaluate = app.add_subcommand("evaluate", "ROC, threshold sweep and score report from a scores CSV");
  add_common(evaluate, c, true);
  evaluate->add_option("--scores", scores, "Scores CSV")->capture_default_str();
  evaluate->add_option("--out", out, "Report directory (default: report)");

  auto* decompose = app.add_subcommand("decompose", "Koopman decomposition of one sequence as JSON");
  add_common(decompose, c, false);
  decompose->add_option("--sequence", sequence, "KSQ1 sequence file")->required();
  decompose->add_option("--model", model, "Use this model's dictionary (default: fit on the sequence)");
  decompose->add_option("--out", out, "Output JSON file (default: stdout)");

  auto* config = app.add_subcommand("config", "Print the effective configuration");
  add_common(config, c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  ConfigPtr cfg;
  if (const ks_status s = make_config(c, cfg); s != KS_OK) return report(s);

  if (*synth) return report(ks_synth(cfg.get(), n, out.empty() ? "data" : out.c_str()));
  if (*train) return report(ks_train(cfg.get(), manifest.c_str(), out.empty() ? "model" : out.c_str()));
  if (*score) {
    return report(ks_score(cfg.get(), model.c_str(), manifest.c_str(), split.c_str(), patient.c_str(),
                           out.empty() ? "scores" : out.c_str()));
  }
  if (*evaluate) return report(ks_evaluate(cfg.get(), scores.c_str(), out.empty() ? "report" : out.c_str()));
  if (*decompose) {
    const bool with_model = decompose->count("--model") > 0;
    char* json = nullptr;
    const ks_status s = ks_decompose(cfg.get(), sequence.c_str(), with_model ? model.c_str() : nullptr,
                                     out.empty() ? nullptr : out.c_str(), out.empty() ? &json : nullptr);
    if (json) {
      std::fputs(json, stdout);
      std::fputc('\n', stdout);
      ks_string_free(json);
    }
    return report(s);
  }
  if (*config) {
    char* json = nullptr;
    const ks_status s = ks_config_to_json(cfg.get(), &json);
    if (json) {
      std::fputs(json, stdout);
      std::fputc('\n', stdout);
      ks_string_free(json);
    }
    return report(s);
  }
  return 1;
}
