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

#include "pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <set>
#include <thread>

#include "error.hpp"
#include "text.hpp"

namespace koopscore {

// --- Configuration --------------------------------------------------------------

PipelineConfig::PipelineConfig() { evaluation.thresholds = threshold_grid(0.0, 1.0, 0.01); }

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  dictionary.seed = s;
  train.seed = s;
  synth.seed = s;
}

void PipelineConfig::validate() const {
  require(threads >= 0, "config: threads must be >= 0");
  require(sequence.enhance.height >= 2 && sequence.enhance.width >= 2, "config: sequence resolution must be >= 2");
  require(sequence.enhance.blur_size >= 1 && sequence.enhance.blur_size % 2 == 1, "config: blur_size must be odd");
  require(sequence.enhance.static_variance_floor >= 0.0, "config: static_variance_floor must be >= 0");
  require(sequence.t_target >= 2, "config: t_target must be >= 2");
  require(dictionary.rank >= 1, "config: dictionary rank must be >= 1");
  require(dictionary.n_centers >= 1, "config: n_centers must be >= 1");
  require(dictionary.degree >= 1, "config: degree must be >= 1");
  require(filter.energy_floor >= 0.0, "config: energy_floor must be >= 0");
  require(filter.modulus_floor >= 0.0, "config: modulus_floor must be >= 0");
  require(filter.k_max >= 1, "config: k_max must be >= 1");
  require(rcond > 0.0 && rcond < 1.0, "config: rcond must lie in (0,1)");
  require(dims.attention_hidden >= 1 && dims.embed_hidden >= 1 && dims.latent >= 1, "config: model dims must be >= 1");
  train.validate();
  synth.validate();
  const auto& t = evaluation.thresholds;
  require(!t.empty(), "config: threshold grid is empty");
  for (std::size_t i = 0; i < t.size(); ++i) {
    require(t[i] >= 0.0 && t[i] <= 1.0, "config: thresholds must lie in [0,1]");
    if (i) require(t[i] > t[i - 1], "config: thresholds must be strictly ascending");
  }
  require(evaluation.classification_threshold >= 0.0 && evaluation.classification_threshold <= 1.0,
          "config: classification_threshold must lie in [0,1]");
}

std::vector<double> threshold_grid(double start, double stop, double step) {
  require(step > 0.0 && stop >= start, "threshold grid: need step > 0 and stop >= start");
  const long n = std::lround((stop - start) / step);
  require(std::abs(start + n * step - stop) < 1e-9 * std::max(1.0, std::abs(stop)),
          "threshold grid: (stop - start) must be a multiple of step");
  std::vector<double> out;
  for (long i = 0; i <= n; ++i) out.push_back(n ? start + (stop - start) * static_cast<double>(i) / n : start);
  return out;
}

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  require(j.is_object(), "config: " + where + " must be an object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    require(known, "config: unknown key '" + where + (where.empty() ? "" : ".") + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ValidationError(std::string("config: key '") + key + "' has the wrong type");
  }
}

ModeTemplate read_mode(const json& j, const std::string& where) {
  check_keys(j, where, {"sigma", "omega", "amplitude", "sharp"});
  ModeTemplate m;
  read(j, "sigma", m.sigma);
  read(j, "omega", m.omega);
  read(j, "amplitude", m.amplitude);
  read(j, "sharp", m.sharp);
  return m;
}

ClinicalDistribution read_clinical(const json& j, ClinicalDistribution d, const std::string& where) {
  check_keys(j, where, {"ef_mean", "ef_sd", "dim_mean", "dim_sd", "age_mean", "age_sd"});
  read(j, "ef_mean", d.ef_mean);
  read(j, "ef_sd", d.ef_sd);
  read(j, "dim_mean", d.dim_mean);
  read(j, "dim_sd", d.dim_sd);
  read(j, "age_mean", d.age_mean);
  read(j, "age_sd", d.age_sd);
  return d;
}

nlohmann::ordered_json mode_json(const ModeTemplate& m) {
  return {{"sigma", m.sigma}, {"omega", m.omega}, {"amplitude", m.amplitude}, {"sharp", m.sharp}};
}

nlohmann::ordered_json clinical_dist_json(const ClinicalDistribution& d) {
  return {{"ef_mean", d.ef_mean},   {"ef_sd", d.ef_sd},   {"dim_mean", d.dim_mean},
          {"dim_sd", d.dim_sd},     {"age_mean", d.age_mean}, {"age_sd", d.age_sd}};
}

std::string signature_name(DiseaseSignature s) {
  switch (s) {
    case DiseaseSignature::kUnstable: return "unstable";
    case DiseaseSignature::kSharp: return "sharp";
    case DiseaseSignature::kBoth: return "both";
  }
  return "unstable";
}

DiseaseSignature parse_signature(const std::string& s) {
  if (s == "unstable") return DiseaseSignature::kUnstable;
  if (s == "sharp") return DiseaseSignature::kSharp;
  if (s == "both") return DiseaseSignature::kBoth;
  throw ValidationError("config: unknown disease signature '" + s + "' (expected unstable, sharp or both)");
}

}  // namespace

PipelineConfig parse_config(const json& j) {
  PipelineConfig c;
  check_keys(j, "", {"seed", "threads", "sequence", "dictionary", "filter", "model", "train", "synth", "evaluation"});
  std::uint64_t seed = c.seed;
  read(j, "seed", seed);
  c.set_seed(seed);
  read(j, "threads", c.threads);

  if (j.contains("sequence")) {
    const json& s = j["sequence"];
    check_keys(s, "sequence", {"height", "width", "blur_size", "static_variance_floor", "t_target"});
    read(s, "height", c.sequence.enhance.height);
    read(s, "width", c.sequence.enhance.width);
    read(s, "blur_size", c.sequence.enhance.blur_size);
    read(s, "static_variance_floor", c.sequence.enhance.static_variance_floor);
    read(s, "t_target", c.sequence.t_target);
  }
  if (j.contains("dictionary")) {
    const json& d = j["dictionary"];
    check_keys(d, "dictionary", {"kind", "rank", "n_centers", "degree"});
    std::string kind(to_string(c.dictionary.kind));
    read(d, "kind", kind);
    c.dictionary.kind = parse_dictionary_kind(kind);
    read(d, "rank", c.dictionary.rank);
    read(d, "n_centers", c.dictionary.n_centers);
    read(d, "degree", c.dictionary.degree);
  }
  if (j.contains("filter")) {
    const json& f = j["filter"];
    check_keys(f, "filter", {"energy_floor", "modulus_floor", "k_max", "rcond"});
    read(f, "energy_floor", c.filter.energy_floor);
    read(f, "modulus_floor", c.filter.modulus_floor);
    read(f, "k_max", c.filter.k_max);
    read(f, "rcond", c.rcond);
  }
  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m, "model", {"attention_hidden", "embed_hidden", "latent"});
    read(m, "attention_hidden", c.dims.attention_hidden);
    read(m, "embed_hidden", c.dims.embed_hidden);
    read(m, "latent", c.dims.latent);
  }
  if (j.contains("train")) {
    const json& t = j["train"];
    check_keys(t, "train", {"learning_rate", "epochs", "batch_size", "l2_penalty", "patience", "folds"});
    read(t, "learning_rate", c.train.learning_rate);
    read(t, "epochs", c.train.epochs);
    read(t, "batch_size", c.train.batch_size);
    read(t, "l2_penalty", c.train.l2_penalty);
    read(t, "patience", c.train.patience);
    read(t, "folds", c.train.folds);
  }
  if (j.contains("synth")) {
    const json& s = j["synth"];
    check_keys(s, "synth",
               {"n_patients", "fraction_positive", "test_fraction", "frames", "dt", "height", "width", "noise_sd",
                "signature", "healthy_modes", "unstable_mode", "sharp_mode", "omega_jitter", "amplitude_jitter",
                "clinical", "female_fraction"});
    CohortSpec& cs = c.synth;
    read(s, "n_patients", cs.n_patients);
    read(s, "fraction_positive", cs.fraction_positive);
    read(s, "test_fraction", cs.test_fraction);
    read(s, "frames", cs.frames);
    read(s, "dt", cs.dt);
    read(s, "height", cs.height);
    read(s, "width", cs.width);
    read(s, "noise_sd", cs.noise_sd);
    if (s.contains("signature")) {
      std::string sig;
      read(s, "signature", sig);
      cs.signature = parse_signature(sig);
    }
    if (s.contains("healthy_modes")) {
      require(s["healthy_modes"].is_array(), "config: synth.healthy_modes must be an array");
      cs.healthy_pool.clear();
      for (const auto& m : s["healthy_modes"]) cs.healthy_pool.push_back(read_mode(m, "synth.healthy_modes[]"));
    }
    if (s.contains("unstable_mode")) cs.unstable_mode = read_mode(s["unstable_mode"], "synth.unstable_mode");
    if (s.contains("sharp_mode")) cs.sharp_mode = read_mode(s["sharp_mode"], "synth.sharp_mode");
    read(s, "omega_jitter", cs.omega_jitter);
    read(s, "amplitude_jitter", cs.amplitude_jitter);
    if (s.contains("clinical")) {
      const json& cl = s["clinical"];
      check_keys(cl, "synth.clinical", {"negative", "positive"});
      if (cl.contains("negative")) cs.negative = read_clinical(cl["negative"], cs.negative, "synth.clinical.negative");
      if (cl.contains("positive")) cs.positive = read_clinical(cl["positive"], cs.positive, "synth.clinical.positive");
    }
    read(s, "female_fraction", cs.female_fraction);
  }
  if (j.contains("evaluation")) {
    const json& e = j["evaluation"];
    check_keys(e, "evaluation", {"thresholds", "classification_threshold"});
    if (e.contains("thresholds")) {
      const json& t = e["thresholds"];
      if (t.is_array()) {
        read(e, "thresholds", c.evaluation.thresholds);
      } else {
        check_keys(t, "evaluation.thresholds", {"start", "stop", "step"});
        double start = 0.0, stop = 1.0, step = 0.01;
        read(t, "start", start);
        read(t, "stop", stop);
        read(t, "step", step);
        c.evaluation.thresholds = threshold_grid(start, stop, step);
      }
    }
    read(e, "classification_threshold", c.evaluation.classification_threshold);
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError("config " + path.string() + ": malformed JSON: " + e.what());
  }
  return parse_config(j);
}

nlohmann::ordered_json config_to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["sequence"] = {{"height", c.sequence.enhance.height},
                   {"width", c.sequence.enhance.width},
                   {"blur_size", c.sequence.enhance.blur_size},
                   {"static_variance_floor", c.sequence.enhance.static_variance_floor},
                   {"t_target", c.sequence.t_target}};
  j["dictionary"] = {{"kind", std::string(to_string(c.dictionary.kind))},
                     {"rank", c.dictionary.rank},
                     {"n_centers", c.dictionary.n_centers},
                     {"degree", c.dictionary.degree}};
  j["filter"] = {{"energy_floor", c.filter.energy_floor},
                 {"modulus_floor", c.filter.modulus_floor},
                 {"k_max", c.filter.k_max},
                 {"rcond", c.rcond}};
  j["model"] = {{"attention_hidden", c.dims.attention_hidden},
                {"embed_hidden", c.dims.embed_hidden},
                {"latent", c.dims.latent}};
  j["train"] = {{"learning_rate", c.train.learning_rate}, {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},       {"l2_penalty", c.train.l2_penalty},
                {"patience", c.train.patience},           {"folds", c.train.folds}};
  const CohortSpec& s = c.synth;
  auto healthy = nlohmann::ordered_json::array();
  for (const auto& m : s.healthy_pool) healthy.push_back(mode_json(m));
  j["synth"] = {{"n_patients", s.n_patients},
                {"fraction_positive", s.fraction_positive},
                {"test_fraction", s.test_fraction},
                {"frames", s.frames},
                {"dt", s.dt},
                {"height", s.height},
                {"width", s.width},
                {"noise_sd", s.noise_sd},
                {"signature", signature_name(s.signature)},
                {"healthy_modes", healthy},
                {"unstable_mode", mode_json(s.unstable_mode)},
                {"sharp_mode", mode_json(s.sharp_mode)},
                {"omega_jitter", s.omega_jitter},
                {"amplitude_jitter", s.amplitude_jitter},
                {"clinical", {{"negative", clinical_dist_json(s.negative)}, {"positive", clinical_dist_json(s.positive)}}},
                {"female_fraction", s.female_fraction}};
  j["evaluation"] = {{"thresholds", c.evaluation.thresholds},
                     {"classification_threshold", c.evaluation.classification_threshold}};
  return j;
}

// --- Manifest -------------------------------------------------------------------

Manifest parse_manifest(const json& j, const std::filesystem::path& root) {
  Manifest m;
  m.root = root;
  try {
    if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
    const json& patients = j.at("patients");
    require(patients.is_array(), "manifest: 'patients' must be an array");
    std::set<std::string> seen;
    for (const auto& p : patients) {
      ManifestEntry e;
      e.patient_id = p.at("patient_id").get<std::string>();
      require(!e.patient_id.empty() && e.patient_id.find_first_of(",\"\n\r") == std::string::npos,
              "manifest: patient id '" + e.patient_id + "' is empty or contains a comma, quote or newline");
      require(seen.insert(e.patient_id).second, "manifest: duplicate patient id " + e.patient_id);
      const std::string who = "manifest: patient " + e.patient_id;
      if (p.contains("label") && !p["label"].is_null()) {
        e.label = p["label"].get<int>();
        require(e.label == 0 || e.label == 1, who + ": label must be 0 or 1");
      }
      if (p.contains("split")) e.split = p["split"].get<std::string>();
      require(e.split == "train" || e.split == "test", who + ": split must be 'train' or 'test'");

      require(p.contains("clinical") && p["clinical"].is_object(), who + ": clinical record is missing");
      const json& c = p["clinical"];
      for (const char* field : {"ef", "dim", "age", "sex"}) {
        require(c.contains(field) && c[field].is_number(), who + ": clinical field '" + field + "' is missing");
      }
      e.clinical.ef = c["ef"].get<double>();
      e.clinical.dim = c["dim"].get<double>();
      e.clinical.age = c["age"].get<double>();
      e.clinical.sex = c["sex"].get<int>();
      try {
        e.clinical.validate();
      } catch (const ValidationError& err) {
        throw ValidationError(who + ": " + err.what());
      }

      if (p.contains("views")) {
        for (const auto& [view, path] : p["views"].items()) e.views.emplace(parse_view(view), path.get<std::string>());
      }
      m.patients.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + path.string() + ": malformed JSON: " + e.what());
  }
  return parse_manifest(j, path.parent_path());
}

nlohmann::ordered_json manifest_to_json(const Manifest& m) {
  nlohmann::ordered_json j;
  j["format"] = "koopscore-manifest";
  j["version"] = 1;
  j["seed"] = m.seed;
  auto patients = nlohmann::ordered_json::array();
  for (const auto& e : m.patients) {
    nlohmann::ordered_json p;
    p["patient_id"] = e.patient_id;
    p["label"] = e.label >= 0 ? nlohmann::ordered_json(e.label) : nlohmann::ordered_json(nullptr);
    p["split"] = e.split;
    p["clinical"] = {{"ef", e.clinical.ef}, {"dim", e.clinical.dim}, {"age", e.clinical.age}, {"sex", e.clinical.sex}};
    nlohmann::ordered_json views = nlohmann::ordered_json::object();
    for (const auto& [v, path] : e.views) views[std::string(to_string(v))] = path;
    p["views"] = std::move(views);
    patients.push_back(std::move(p));
  }
  j["patients"] = std::move(patients);
  return j;
}

// --- Execution helpers --------------------------------------------------------

int worker_count(const PipelineConfig& cfg) {
  int n = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("KOOPSCORE_THREADS"); env && *env) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    require(end && *end == '\0' && cap >= 1, "KOOPSCORE_THREADS must be a positive integer");
    n = std::min<long>(n, cap);
  }
  return std::max(1, n);
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex mu;
  std::size_t err_index = std::numeric_limits<std::size_t>::max();
  std::exception_ptr err;
  auto work = [&] {
    for (std::size_t i; !failed.load() && (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < w; ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

FrameSequence preprocess(const FrameSequence& seq, const SequenceConfig& cfg) {
  return normalize_cycle(enhance(seq, cfg.enhance), cfg.t_target);
}

namespace {

FrameSequence load_view(const ManifestEntry& e, ViewLabel view, const std::filesystem::path& root,
                        const SequenceConfig& cfg) {
  const std::filesystem::path path = root / e.views.at(view);
  FrameSequence seq = load_sequence(path);
  require(seq.patient_id() == e.patient_id,
          "sequence " + path.string() + " belongs to patient " + seq.patient_id() + ", not " + e.patient_id);
  require(seq.view() == view, "sequence " + path.string() + " holds view " + std::string(to_string(seq.view())) +
                                  ", not " + std::string(to_string(view)));
  return preprocess(seq, cfg);
}

StudyFeatures blank_features(const ManifestEntry& e) {
  StudyFeatures f;
  f.patient_id = e.patient_id;
  f.clinical = e.clinical;
  f.label = e.label;
  return f;
}

}  // namespace

StudyFeatures extract_features(const ManifestEntry& entry, const std::filesystem::path& root, const RiskModel& model) {
  StudyFeatures f = blank_features(entry);
  for (const auto& [view, path] : entry.views) {
    const auto dict = model.dictionaries.find(view);
    require(dict != model.dictionaries.end(), "model has no dictionary for view " + std::string(to_string(view)));
    const FrameSequence seq = load_view(entry, view, root, model.sequence);
    const KoopmanDecomposition dec = run_edmd(seq, dict->second, model.filter, model.rcond);
    for (const auto& m : dec.modes) f.modes.push_back(mode_features(m, dec));
  }
  return f;
}

// --- Commands -----------------------------------------------------------------

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string csv_header(bool with_fold) {
  return std::string("patient_id,value,dyn,clin,inter,label,age") + (with_fold ? ",fold" : "") + "\n";
}

std::string csv_row(const AcousticScore& s, int label, double age, int fold) {
  std::string out = s.patient_id + "," + format_number(s.value) + "," + format_number(s.dyn) + "," +
                    format_number(s.clin) + "," + format_number(s.inter) + "," +
                    (label >= 0 ? std::to_string(label) : std::string()) + "," + format_number(age);
  if (fold >= 0) out += "," + std::to_string(fold);
  return out + "\n";
}

std::string checksum_ids(const std::vector<std::string>& ids) {
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a over the sorted, newline-joined ids
  for (const auto& id : ids) {
    for (unsigned char c : id) h = (h ^ c) * 1099511628211ULL;
    h = (h ^ '\n') * 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<std::string> sorted_unique(std::vector<std::string> ids) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

std::size_t intersection_size(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::string> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out.size();
}

}  // namespace

SynthResult cmd_synth(const PipelineConfig& cfg, int n, const std::filesystem::path& out_dir) {
  cfg.validate();
  CohortSpec spec = cfg.synth;
  if (n >= 0) spec.n_patients = n;
  require(spec.n_patients >= 1, "synth: n must be >= 1");
  spec.validate();
  ensure_dir(out_dir / "seq");

  const CohortPlan plan = plan_cohort(spec);
  Manifest man;
  man.root = out_dir;
  man.seed = spec.seed;
  man.patients.resize(spec.n_patients);
  std::vector<OracleRecord> oracle(spec.n_patients);

  parallel_for(spec.n_patients, worker_count(cfg), [&](std::size_t i) {
    SyntheticPatient p = gen_planned_patient(spec, plan, static_cast<int>(i));
    ManifestEntry& e = man.patients[i];
    e.patient_id = p.study.patient_id;
    e.label = *p.study.label;
    e.split = p.test ? "test" : "train";
    e.clinical = *p.study.clinical;
    for (const auto& [view, seq] : p.study.sequences) {
      const std::string rel = "seq/" + e.patient_id + "_" + std::string(to_string(view)) + ".ksq";
      save_sequence(seq, out_dir / rel);
      e.views.emplace(view, rel);
    }
    oracle[i] = std::move(p.oracle);
  });

  write_file(out_dir / "manifest.json", manifest_to_json(man).dump(2) + "\n");
  write_file(out_dir / "oracle.csv", oracle_csv(std::span<const OracleRecord>(oracle)));
  SynthResult r;
  r.patients = spec.n_patients;
  r.sequences = spec.n_patients * kNumViews;
  r.manifest = out_dir / "manifest.json";
  return r;
}

TrainOutput cmd_train(const PipelineConfig& cfg, const std::filesystem::path& manifest_path,
                      const std::filesystem::path& out_dir) {
  cfg.validate();
  const Manifest man = load_manifest(manifest_path);
  std::vector<const ManifestEntry*> patients;
  TrainOutput out;
  for (const auto& e : man.patients) {
    if (e.split == "train") {
      require(e.label == 0 || e.label == 1, "train: patient " + e.patient_id + " has no binary label");
      patients.push_back(&e);
    } else {
      out.held_out_ids.push_back(e.patient_id);
    }
  }
  out.held_out_ids = sorted_unique(out.held_out_ids);
  const std::size_t n = patients.size();
  const int k = cfg.train.folds;
  std::vector<int> labels;
  for (const auto* e : patients) labels.push_back(e->label);
  require(std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0,
          "train: the training split must contain both classes");
  require(static_cast<int>(n) >= k, "train: fewer training patients than folds");
  const std::vector<int> folds = kfold_split(labels, k, cfg.seed);
  ensure_dir(out_dir);

  // Fit f < k leaves fold f out; fit k is the final model on every training patient.
  const int fits = k + 1;
  auto in_fit = [&](int f, std::size_t j) { return f == k || folds[j] != f; };
  const int workers = worker_count(cfg);

  std::vector<std::vector<StudyFeatures>> feats(fits);
  for (auto& fv : feats)
    for (const auto* e : patients) fv.push_back(blank_features(*e));
  std::vector<std::map<ViewLabel, Dictionary>> dicts(fits);
  std::vector<std::vector<std::string>> dict_ids(fits);

  for (ViewLabel view : kAllViews) {
    std::vector<std::size_t> have;
    for (std::size_t j = 0; j < n; ++j)
      if (patients[j]->views.count(view)) have.push_back(j);
    if (have.empty()) continue;

    std::vector<FrameSequence> seqs(have.size());
    parallel_for(have.size(), workers,
                 [&](std::size_t i) { seqs[i] = load_view(*patients[have[i]], view, man.root, cfg.sequence); });

    std::vector<std::optional<Dictionary>> fitted(fits);
    parallel_for(fits, workers, [&](std::size_t f) {
      std::vector<const FrameSequence*> pool;
      for (std::size_t i = 0; i < have.size(); ++i)
        if (in_fit(static_cast<int>(f), have[i])) pool.push_back(&seqs[i]);
      if (!pool.empty()) fitted[f] = fit_dictionary(std::span<const FrameSequence* const>(pool), cfg.dictionary);
    });
    for (int f = 0; f < fits; ++f) {
      if (!fitted[f]) continue;
      for (std::size_t i = 0; i < have.size(); ++i)
        if (in_fit(f, have[i])) dict_ids[f].push_back(seqs[i].patient_id());
      dicts[f].emplace(view, std::move(*fitted[f]));
    }

    std::vector<std::vector<ModeFeatures>> mf(static_cast<std::size_t>(fits) * have.size());
    parallel_for(mf.size(), workers, [&](std::size_t idx) {
      const int f = static_cast<int>(idx / have.size());
      const std::size_t i = idx % have.size();
      const auto d = dicts[f].find(view);
      if (d == dicts[f].end()) return;
      const KoopmanDecomposition dec = run_edmd(seqs[i], d->second, cfg.filter, cfg.rcond);
      for (const auto& m : dec.modes) mf[idx].push_back(mode_features(m, dec));
    });
    for (std::size_t idx = 0; idx < mf.size(); ++idx) {
      auto& dst = feats[idx / have.size()][have[idx % have.size()]].modes;
      dst.insert(dst.end(), mf[idx].begin(), mf[idx].end());
    }
  }

  RiskModel base;
  base.dims = cfg.dims;
  base.dict_config = cfg.dictionary;
  base.filter = cfg.filter;
  base.rcond = cfg.rcond;
  base.sequence = cfg.sequence;

  std::string history = "model,epoch,train_loss,val_loss,best_loss\n";
  std::vector<std::vector<ScoredRow>> cv_rows(k);
  std::string cv_csv = csv_header(true);
  std::vector<std::string> cv_lines(n);

  for (int f = 0; f < fits; ++f) {
    std::vector<StudyFeatures> tr, val;
    for (std::size_t j = 0; j < n; ++j) (in_fit(f, j) ? tr : val).push_back(feats[f][j]);

    RiskModel m = base;
    m.dictionaries = dicts[f];
    m.clinical_norm = fit_clinical_norm(tr);
    m.feature_norm = fit_feature_norm(tr);
    m.params = init_params(cfg.dims, mix_seed(cfg.seed, static_cast<std::uint64_t>(f)));
    center_offset(m, tr);
    TrainResult res = train(m, tr, cfg.train, val);

    FoldAudit audit;
    audit.fold = f < k ? f : -1;
    audit.dictionary_ids = sorted_unique(dict_ids[f]);
    for (const auto& s : tr) audit.normalization_ids.push_back(s.patient_id);
    audit.normalization_ids = sorted_unique(audit.normalization_ids);
    audit.gradient_ids = sorted_unique(res.updated_ids);
    for (const auto& s : val) audit.validation_ids.push_back(s.patient_id);
    audit.validation_ids = sorted_unique(audit.validation_ids);
    for (const auto* used : {&audit.dictionary_ids, &audit.normalization_ids, &audit.gradient_ids}) {
      if (intersection_size(*used, out.held_out_ids) || intersection_size(*used, audit.validation_ids))
        throw Error(ErrorCode::kInternal, "train: fold hygiene violated in fit " + std::to_string(f));
    }
    out.audit.push_back(std::move(audit));

    const std::string tag = f < k ? std::to_string(f) : "final";
    for (const auto& h : res.history) {
      history += tag + "," + std::to_string(h.epoch) + "," + format_number(h.train_loss) + "," +
                 (std::isfinite(h.val_loss) ? format_number(h.val_loss) : std::string()) + "," +
                 format_number(h.best_loss) + "\n";
    }

    if (f < k) {
      save_model(res.model, out_dir / ("fold_" + std::to_string(f) + ".krm"));
      std::size_t v = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (in_fit(f, j)) continue;
        const AcousticScore s = score_features(val[v++], res.model);
        cv_rows[f].push_back({s.patient_id, s.value, patients[j]->label, patients[j]->clinical.age, f});
        cv_lines[j] = csv_row(s, patients[j]->label, patients[j]->clinical.age, f);
      }
    } else {
      save_model(res.model, out_dir / "model.krm");
      std::string csv = csv_header(false);
      for (std::size_t j = 0; j < n; ++j)
        csv += csv_row(score_features(tr[j], res.model), patients[j]->label, patients[j]->clinical.age, -1);
      write_file(out_dir / "train_scores.csv", csv);
    }
  }

  for (const auto& line : cv_lines) cv_csv += line;
  write_file(out_dir / "cv_scores.csv", cv_csv);
  write_file(out_dir / "history.csv", history);
  out.cv = cv_report(cv_rows, cfg.evaluation.thresholds, cfg.evaluation.classification_threshold);
  write_file(out_dir / "metrics.csv", metrics_csv(out.cv));

  nlohmann::ordered_json audit;
  audit["held_out_ids"] = out.held_out_ids;
  auto fits_json = nlohmann::ordered_json::array();
  for (const auto& a : out.audit) {
    nlohmann::ordered_json fj;
    fj["fold"] = a.fold >= 0 ? nlohmann::ordered_json(a.fold) : nlohmann::ordered_json("final");
    fj["dictionary_ids"] = a.dictionary_ids;
    fj["dictionary_checksum"] = checksum_ids(a.dictionary_ids);
    fj["normalization_ids"] = a.normalization_ids;
    fj["gradient_ids"] = a.gradient_ids;
    fj["validation_ids"] = a.validation_ids;
    fj["held_out_overlap"] = intersection_size(a.dictionary_ids, out.held_out_ids) +
                             intersection_size(a.normalization_ids, out.held_out_ids) +
                             intersection_size(a.gradient_ids, out.held_out_ids);
    fits_json.push_back(std::move(fj));
  }
  audit["fits"] = std::move(fits_json);
  write_file(out_dir / "audit.json", audit.dump(2) + "\n");
  return out;
}

std::vector<AcousticScore> cmd_score(const PipelineConfig& cfg, const std::filesystem::path& model_path,
                                     const std::filesystem::path& manifest_path, const std::string& split,
                                     const std::string& patient, const std::filesystem::path& out_dir) {
  cfg.validate();
  require(split == "all" || split == "train" || split == "test", "score: split must be all, train or test");
  const RiskModel model = load_model(model_path);
  const Manifest man = load_manifest(manifest_path);
  std::vector<const ManifestEntry*> chosen;
  for (const auto& e : man.patients) {
    if (!patient.empty() && e.patient_id != patient) continue;
    if (split != "all" && e.split != split) continue;
    chosen.push_back(&e);
  }
  if (!patient.empty()) require(!chosen.empty(), "score: patient " + patient + " is not in the manifest split");

  std::vector<AcousticScore> scores(chosen.size());
  parallel_for(chosen.size(), worker_count(cfg), [&](std::size_t i) {
    scores[i] = score_features(extract_features(*chosen[i], man.root, model), model);
  });

  ensure_dir(out_dir);
  std::string jsonl, csv = csv_header(false);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    nlohmann::ordered_json j = to_json(scores[i]);
    j["label"] = chosen[i]->label >= 0 ? nlohmann::ordered_json(chosen[i]->label) : nlohmann::ordered_json(nullptr);
    jsonl += j.dump() + "\n";
    csv += csv_row(scores[i], chosen[i]->label, chosen[i]->clinical.age, -1);
  }
  write_file(out_dir / "scores.jsonl", jsonl);
  write_file(out_dir / "scores.csv", csv);
  return scores;
}

std::vector<ScoredRow> parse_scores_csv(const std::string& text) {
  std::vector<std::string> lines = split(text, '\n');
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  require(!lines.empty(), "scores csv: missing header");
  for (auto& l : lines)
    if (!l.empty() && l.back() == '\r') l.pop_back();
  const std::vector<std::string> header = split(lines[0], ',');
  auto col = [&](const char* name) -> int {
    const auto it = std::find(header.begin(), header.end(), name);
    return it == header.end() ? -1 : static_cast<int>(it - header.begin());
  };
  const int c_id = col("patient_id"), c_value = col("value"), c_label = col("label"), c_age = col("age"),
            c_fold = col("fold");
  require(c_id >= 0 && c_value >= 0 && c_label >= 0, "scores csv: need patient_id, value and label columns");

  auto number = [](const std::string& s, std::size_t line, const char* what) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    require(!s.empty() && end && *end == '\0', "scores csv line " + std::to_string(line) + ": bad " + what);
    return v;
  };
  std::vector<ScoredRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::vector<std::string> f = split(lines[i], ',');
    require(f.size() == header.size(), "scores csv line " + std::to_string(i + 1) + ": wrong field count");
    ScoredRow r;
    r.patient_id = f[c_id];
    r.score = number(f[c_value], i + 1, "value");
    require(r.score >= 0.0 && r.score <= 1.0, "scores csv line " + std::to_string(i + 1) + ": value outside [0,1]");
    r.label = f[c_label].empty() ? -1 : static_cast<int>(number(f[c_label], i + 1, "label"));
    if (c_age >= 0 && !f[c_age].empty()) r.age = number(f[c_age], i + 1, "age");
    if (c_fold >= 0 && !f[c_fold].empty()) r.fold = static_cast<int>(number(f[c_fold], i + 1, "fold"));
    rows.push_back(std::move(r));
  }
  return rows;
}

Evaluation cmd_evaluate(const PipelineConfig& cfg, const std::filesystem::path& scores_csv,
                        const std::filesystem::path& out_dir) {
  cfg.validate();
  const std::vector<ScoredRow> rows = parse_scores_csv(read_file(scores_csv));
  Evaluation ev = evaluate_rows(rows, cfg.evaluation.thresholds, cfg.evaluation.classification_threshold);
  render_report(ev, out_dir);
  return ev;
}

nlohmann::ordered_json cmd_decompose(const PipelineConfig& cfg, const std::filesystem::path& sequence,
                                     const std::filesystem::path& model_path, const std::filesystem::path& out_path) {
  cfg.validate();
  const FrameSequence raw = load_sequence(sequence);
  KoopmanDecomposition dec;
  if (!model_path.empty()) {
    const RiskModel model = load_model(model_path);
    const auto d = model.dictionaries.find(raw.view());
    require(d != model.dictionaries.end(), "model has no dictionary for view " + std::string(to_string(raw.view())));
    dec = run_edmd(preprocess(raw, model.sequence), d->second, model.filter, model.rcond);
  } else {
    const FrameSequence seq = preprocess(raw, cfg.sequence);
    const Dictionary dict = fit_dictionary(std::span<const FrameSequence>(&seq, 1), cfg.dictionary);
    dec = run_edmd(seq, dict, cfg.filter, cfg.rcond);
  }
  nlohmann::ordered_json j = to_json(dec);
  if (!out_path.empty()) {
    if (out_path.has_parent_path()) ensure_dir(out_path.parent_path());
    write_file(out_path, j.dump(2) + "\n");
  }
  return j;
}

}  // namespace koopscore
