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

#include "model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <random>

#include "error.hpp"
#include "text.hpp"

namespace koopscore {

static_assert(std::endian::native == std::endian::little, "model files are little-endian");

void TrainConfig::validate() const {
  require(learning_rate >= 0.0 && std::isfinite(learning_rate), "train: learning_rate must be >= 0");
  require(epochs >= 1, "train: epochs must be >= 1");
  require(batch_size >= 1, "train: batch_size must be >= 1");
  require(l2_penalty >= 0.0, "train: l2_penalty must be >= 0");
  require(patience >= 0, "train: patience must be >= 0");
  require(folds >= 2, "train: folds must be >= 2");
}

// --- Initialization and normalization --------------------------------------

namespace {

void glorot(Matrix& w, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
  // Column-major fill order is part of the seeded contract.
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = a * (2.0 * uniform01(rng) - 1.0);
}

void glorot(Vector& q, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(q.size() + 1));
  for (Eigen::Index i = 0; i < q.size(); ++i) q(i) = a * (2.0 * uniform01(rng) - 1.0);
}

Standardization standardize(const std::vector<std::vector<double>>& columns) {
  Standardization s;
  for (const auto& col : columns) {
    require(!col.empty(), "normalization: no training values");
    const double n = static_cast<double>(col.size());
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / n;
    double ss = 0.0;
    for (double x : col) ss += (x - mean) * (x - mean);
    double sd = col.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    if (!(sd > 1e-12)) sd = 1.0;  // constant column: centre only
    s.mean.push_back(mean);
    s.sd.push_back(sd);
  }
  return s;
}

}  // namespace

RiskParams init_params(const ModelDims& dims, std::uint64_t seed) {
  require(dims.attention_hidden >= 1 && dims.embed_hidden >= 1 && dims.latent >= 1, "init: dims must be >= 1");
  std::mt19937_64 rng(mix_seed(seed, 0x1417));
  RiskParams p = RiskParams::zeros(dims);
  glorot(p.q, rng);
  glorot(p.v, rng);
  glorot(p.mode_embed.hidden.w, rng);
  glorot(p.mode_embed.out.w, rng);
  glorot(p.clinical_embed.hidden.w, rng);
  glorot(p.clinical_embed.out.w, rng);
  p.eta = 1.0;
  p.z0 = 0.0;
  return p;
}

Standardization fit_clinical_norm(std::span<const StudyFeatures> train) {
  std::vector<std::vector<double>> cols(3);
  for (const auto& s : train) {
    cols[0].push_back(s.clinical.ef);
    cols[1].push_back(s.clinical.dim);
    cols[2].push_back(s.clinical.age);
  }
  return standardize(cols);
}

Standardization fit_feature_norm(std::span<const StudyFeatures> train) {
  std::vector<std::vector<double>> cols(kContinuousFeatures);
  for (const auto& s : train)
    for (const auto& m : s.modes) {
      const auto a = m.as_array();
      for (int j = 0; j < kContinuousFeatures; ++j) cols[j].push_back(a[j]);
    }
  if (cols[0].empty()) {
    Standardization s;
    s.mean.assign(kContinuousFeatures, 0.0);
    s.sd.assign(kContinuousFeatures, 1.0);
    return s;
  }
  return standardize(cols);
}

void center_offset(RiskModel& model, std::span<const StudyFeatures> train) {
  require(!train.empty(), "center_offset: empty training set");
  std::vector<double> z;
  for (const auto& s : train) z.push_back(score_features(s, model).z);
  std::sort(z.begin(), z.end());
  const std::size_t n = z.size();
  model.params.z0 = n % 2 ? z[n / 2] : 0.5 * (z[n / 2 - 1] + z[n / 2]);
}

// --- Loss and gradients -------------------------------------------------------

namespace {

void check_labels(std::span<const StudyFeatures> batch) {
  require(!batch.empty(), "loss: empty batch");
  for (const auto& s : batch)
    require(s.label == 0 || s.label == 1, "loss: label of " + s.patient_id + " is not binary");
}

double bce(double v, int y) {
  const double c = std::clamp(v, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return y == 1 ? -std::log(c) : -std::log(1.0 - c);
}

}  // namespace

double loss(const RiskModel& model, std::span<const StudyFeatures> batch, double l2_penalty) {
  check_labels(batch);
  double acc = 0.0;
  for (const auto& s : batch) acc += bce(score_features(s, model).value, s.label);
  return acc / static_cast<double>(batch.size()) + l2_penalty * model.params.penalty_norm();
}

LossGradient gradients(const RiskModel& model, std::span<const StudyFeatures> batch, double l2_penalty) {
  check_labels(batch);
  LossGradient out;
  out.grad = RiskParams::zeros(model.dims);
  const double n = static_cast<double>(batch.size());
  double acc = 0.0;
  for (const auto& s : batch) {
    // Forward pass first to learn whether the clamp is active.
    const double v = score_features(s, model).value;
    acc += bce(v, s.label);
    double dv = 0.0;
    if (v > kProbabilityClamp && v < 1.0 - kProbabilityClamp) dv = (s.label == 1 ? -1.0 / v : 1.0 / (1.0 - v)) / n;
    if (dv != 0.0) backprop_score(s, model, dv, out.grad);
  }
  out.loss = acc / n + l2_penalty * model.params.penalty_norm();

  if (l2_penalty > 0.0) {
    auto g = out.grad.groups();
    const auto p = model.params.groups();
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (!g[k].penalized) continue;
      for (long i = 0; i < g[k].size; ++i) g[k].data[i] += 2.0 * l2_penalty * p[k].second[i];
    }
  }
  return out;
}

// --- Training -----------------------------------------------------------------

TrainResult train(const RiskModel& start, std::span<const StudyFeatures> train_set, const TrainConfig& cfg,
                  std::span<const StudyFeatures> val_set) {
  cfg.validate();
  check_labels(train_set);
  const bool has_pos = std::any_of(train_set.begin(), train_set.end(), [](const auto& s) { return s.label == 1; });
  const bool has_neg = std::any_of(train_set.begin(), train_set.end(), [](const auto& s) { return s.label == 0; });
  require(has_pos && has_neg, "train: training set must contain both classes");
  if (!val_set.empty()) check_labels(val_set);

  TrainResult result;
  result.model = start;
  for (const auto& s : train_set) result.updated_ids.push_back(s.patient_id);

  RiskModel& m = result.model;
  RiskModel best = m;
  const bool monitor_val = !val_set.empty();
  double best_loss = monitor_val ? loss(m, val_set, 0.0) : loss(m, train_set, cfg.l2_penalty);
  int since_best = 0;

  std::mt19937_64 rng(mix_seed(cfg.seed, 0x7A1));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<StudyFeatures> batch;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      batch.clear();
      for (std::size_t i = b; i < std::min(order.size(), b + cfg.batch_size); ++i) batch.push_back(train_set[order[i]]);
      if (cfg.learning_rate == 0.0) continue;
      const LossGradient lg = gradients(m, batch, cfg.l2_penalty);
      m.params.axpy(-cfg.learning_rate, lg.grad);
      m.params.symmetrize_omega();
      m.params.eta = std::max(m.params.eta, kMinEta);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss(m, train_set, cfg.l2_penalty);
    rec.val_loss = monitor_val ? loss(m, val_set, 0.0) : std::numeric_limits<double>::quiet_NaN();
    const double monitored = monitor_val ? rec.val_loss : rec.train_loss;
    if (monitored < best_loss) {
      best_loss = monitored;
      best = m;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    rec.best_loss = best_loss;
    result.history.push_back(rec);
    if (monitor_val && cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  if (monitor_val) m = best;
  return result;
}

std::vector<int> kfold_split(std::span<const int> labels, int k, std::uint64_t seed) {
  require(k >= 2, "kfold_split: k must be >= 2");
  require(static_cast<int>(labels.size()) >= k, "kfold_split: more folds than patients");
  std::mt19937_64 rng(mix_seed(seed, 0xF01D));
  std::vector<std::size_t> order;
  for (int cls : {1, 0}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      require(labels[i] == 0 || labels[i] == 1, "kfold_split: labels must be binary");
      if (labels[i] == cls) members.push_back(i);
    }
    std::shuffle(members.begin(), members.end(), rng);
    order.insert(order.end(), members.begin(), members.end());
  }
  // Dealing the class-ordered list round-robin stratifies and balances sizes.
  std::vector<int> fold(labels.size(), 0);
  for (std::size_t pos = 0; pos < order.size(); ++pos) fold[order[pos]] = static_cast<int>(pos % k);
  return fold;
}

// --- Model file -----------------------------------------------------------------

namespace {

constexpr std::string_view kModelMagic = "KRM1";

struct Block {
  std::string name;
  std::vector<double> values;
};

std::vector<double> to_vec(const double* d, long n) { return std::vector<double>(d, d + n); }

std::vector<Block> model_blocks(const RiskModel& m) {
  std::vector<Block> blocks;
  for (const auto& [name, span] : m.params.groups()) blocks.push_back({name, {span.begin(), span.end()}});
  blocks.push_back({"clinical_norm.mean", m.clinical_norm.mean});
  blocks.push_back({"clinical_norm.sd", m.clinical_norm.sd});
  blocks.push_back({"feature_norm.mean", m.feature_norm.mean});
  blocks.push_back({"feature_norm.sd", m.feature_norm.sd});
  for (const auto& [view, d] : m.dictionaries) {
    const std::string p = "dictionary." + std::string(to_string(view)) + ".";
    blocks.push_back({p + "mean", to_vec(d.mean.data(), d.mean.size())});
    blocks.push_back({p + "components", to_vec(d.components.data(), d.components.size())});
    blocks.push_back({p + "centers", to_vec(d.centers.data(), d.centers.size())});
    blocks.push_back({p + "rbf_width", {d.rbf_width}});
  }
  return blocks;
}

nlohmann::ordered_json model_header(const RiskModel& m, const std::vector<Block>& blocks) {
  nlohmann::ordered_json h;
  h["format"] = "KRM1";
  h["version"] = kModelFormatVersion;
  h["dims"] = {{"attention_hidden", m.dims.attention_hidden},
               {"embed_hidden", m.dims.embed_hidden},
               {"latent", m.dims.latent},
               {"mode_features", kModeFeatureCount}};
  nlohmann::ordered_json cfg;
  cfg["dictionary"] = {{"kind", std::string(to_string(m.dict_config.kind))},
                       {"rank", m.dict_config.rank},
                       {"n_centers", m.dict_config.n_centers},
                       {"degree", m.dict_config.degree},
                       {"seed", m.dict_config.seed}};
  cfg["filter"] = {{"energy_floor", m.filter.energy_floor},
                   {"modulus_floor", m.filter.modulus_floor},
                   {"k_max", m.filter.k_max}};
  cfg["rcond"] = m.rcond;
  cfg["sequence"] = {{"height", m.sequence.enhance.height},
                     {"width", m.sequence.enhance.width},
                     {"blur_size", m.sequence.enhance.blur_size},
                     {"static_variance_floor", m.sequence.enhance.static_variance_floor},
                     {"t_target", m.sequence.t_target}};
  h["config"] = std::move(cfg);
  auto dicts = nlohmann::ordered_json::array();
  for (const auto& [view, d] : m.dictionaries) {
    dicts.push_back({{"view", std::string(to_string(view))},
                     {"kind", std::string(to_string(d.kind))},
                     {"height", d.height},
                     {"width", d.width},
                     {"rank", d.rank},
                     {"rank_reduced", d.rank_reduced},
                     {"n_centers", d.centers.rows()},
                     {"degree", d.degree}});
  }
  h["dictionaries"] = std::move(dicts);
  auto jb = nlohmann::ordered_json::array();
  for (const auto& b : blocks) jb.push_back({{"name", b.name}, {"size", b.values.size()}});
  h["blocks"] = std::move(jb);
  return h;
}

}  // namespace

nlohmann::ordered_json describe_model(const RiskModel& model) { return model_header(model, model_blocks(model)); }

std::string encode_model(const RiskModel& model) {
  const auto blocks = model_blocks(model);
  std::string out(kModelMagic);
  out += model_header(model, blocks).dump();
  out += '\n';
  for (const auto& b : blocks) {
    const std::size_t at = out.size();
    out.resize(at + b.values.size() * sizeof(double));
    if (!b.values.empty()) std::memcpy(out.data() + at, b.values.data(), b.values.size() * sizeof(double));
  }
  return out;
}

RiskModel decode_model(std::string_view bytes) {
  if (bytes.substr(0, kModelMagic.size()) != kModelMagic) throw FormatError("model file: bad magic bytes");
  const std::size_t eol = bytes.find('\n', kModelMagic.size());
  if (eol == std::string_view::npos) throw FormatError("model file: unterminated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(kModelMagic.size(), eol - kModelMagic.size()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: malformed header: ") + e.what());
  }

  RiskModel m;
  std::map<std::string, std::vector<double>> blocks;
  std::vector<std::string> order;
  try {
    const int version = h.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw IncompatibleError("model file: format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kModelFormatVersion) + ")");
    }
    const auto& d = h.at("dims");
    if (d.at("mode_features").get<int>() != kModeFeatureCount)
      throw IncompatibleError("model file: mode feature count does not match this build");
    m.dims = {d.at("attention_hidden").get<int>(), d.at("embed_hidden").get<int>(), d.at("latent").get<int>()};
    const auto& c = h.at("config");
    const auto& dc = c.at("dictionary");
    m.dict_config.kind = parse_dictionary_kind(dc.at("kind").get<std::string>());
    m.dict_config.rank = dc.at("rank").get<int>();
    m.dict_config.n_centers = dc.at("n_centers").get<int>();
    m.dict_config.degree = dc.at("degree").get<int>();
    m.dict_config.seed = dc.at("seed").get<std::uint64_t>();
    const auto& fc = c.at("filter");
    m.filter = {fc.at("energy_floor").get<double>(), fc.at("modulus_floor").get<double>(), fc.at("k_max").get<int>()};
    m.rcond = c.at("rcond").get<double>();
    const auto& sc = c.at("sequence");
    m.sequence.enhance.height = sc.at("height").get<int>();
    m.sequence.enhance.width = sc.at("width").get<int>();
    m.sequence.enhance.blur_size = sc.at("blur_size").get<int>();
    m.sequence.enhance.static_variance_floor = sc.at("static_variance_floor").get<double>();
    m.sequence.t_target = sc.at("t_target").get<int>();

    std::size_t offset = eol + 1;
    for (const auto& b : h.at("blocks")) {
      const std::string name = b.at("name").get<std::string>();
      const std::size_t n = b.at("size").get<std::size_t>();
      if (bytes.size() < offset + n * sizeof(double)) throw FormatError("model file: truncated block " + name);
      std::vector<double> v(n);
      if (n) std::memcpy(v.data(), bytes.data() + offset, n * sizeof(double));
      offset += n * sizeof(double);
      blocks.emplace(name, std::move(v));
    }
    if (offset != bytes.size()) throw FormatError("model file: trailing bytes after the last block");

    auto take = [&](const std::string& name, std::size_t expect) -> std::vector<double>& {
      auto it = blocks.find(name);
      if (it == blocks.end()) throw FormatError("model file: missing block " + name);
      if (it->second.size() != expect) throw FormatError("model file: block " + name + " has the wrong size");
      return it->second;
    };

    m.params = RiskParams::zeros(m.dims);
    for (auto& g : m.params.groups()) {
      const auto& v = take(g.name, static_cast<std::size_t>(g.size));
      std::copy(v.begin(), v.end(), g.data);
    }
    m.clinical_norm = {take("clinical_norm.mean", 3), take("clinical_norm.sd", 3)};
    m.feature_norm = {take("feature_norm.mean", kContinuousFeatures), take("feature_norm.sd", kContinuousFeatures)};

    for (const auto& jd : h.at("dictionaries")) {
      Dictionary dict;
      const ViewLabel view = parse_view(jd.at("view").get<std::string>());
      dict.kind = parse_dictionary_kind(jd.at("kind").get<std::string>());
      dict.height = jd.at("height").get<int>();
      dict.width = jd.at("width").get<int>();
      dict.rank = jd.at("rank").get<int>();
      dict.rank_reduced = jd.at("rank_reduced").get<bool>();
      dict.degree = jd.at("degree").get<int>();
      const long n_centers = jd.at("n_centers").get<long>();
      const std::size_t px = static_cast<std::size_t>(dict.height) * dict.width;
      const std::string p = "dictionary." + std::string(to_string(view)) + ".";
      const auto& mean = take(p + "mean", px);
      const auto& comp = take(p + "components", px * dict.rank);
      const auto& cent = take(p + "centers", static_cast<std::size_t>(n_centers) * dict.rank);
      dict.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(px));
      dict.components = Eigen::Map<const Matrix>(comp.data(), dict.rank, static_cast<Eigen::Index>(px));
      dict.centers = Eigen::Map<const Matrix>(cent.data(), n_centers, dict.rank);
      dict.rbf_width = take(p + "rbf_width", 1)[0];
      m.dictionaries.emplace(view, std::move(dict));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model file: header field error: ") + e.what());
  }
  return m;
}

void save_model(const RiskModel& model, const std::filesystem::path& path) { write_file(path, encode_model(model)); }

RiskModel load_model(const std::filesystem::path& path) { return decode_model(read_file(path)); }

}  // namespace koopscore
