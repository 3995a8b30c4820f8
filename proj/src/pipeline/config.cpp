// Copyright 2026 The ltdd Authors.
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

#include "pipeline/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <sstream>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"

namespace ltdd {

namespace {

constexpr std::array kKeys{
    ConfigKey{"seed", "0", "global seed; every stage seed derives from it"},
    ConfigKey{"output_dir", "ltdd_out", "artifact directory"},
    ConfigKey{"deterministic", "0", "single-threaded bit-exact execution"},
    ConfigKey{"data.source", "blobs", "blobs | file | manifest"},
    ConfigKey{"data.path", "", "balanced source dataset (file) or CSV manifest (manifest)"},
    ConfigKey{"data.num_classes", "10", "number of classes"},
    ConfigKey{"data.channels", "3", "image channels"},
    ConfigKey{"data.height", "16", "image height"},
    ConfigKey{"data.width", "16", "image width"},
    ConfigKey{"data.blobs_per_class", "250", "generated images per class (blobs source)"},
    ConfigKey{"data.blob_style", "standard", "standard | hard (blobs source)"},
    ConfigKey{"data.test_per_class", "50", "balanced test images held out per class"},
    ConfigKey{"lt.largest_class_count", "200", "images kept for class 0"},
    ConfigKey{"lt.imbalance_factor", "10", "ratio between the largest and smallest class"},
    ConfigKey{"model.depth", "3", "conv blocks"},
    ConfigKey{"model.width", "16", "channels per conv block"},
    ConfigKey{"expert.iterations", "1000", "expert training iterations"},
    ConfigKey{"expert.batch_size", "64", "expert batch size"},
    ConfigKey{"expert.gamma_robust", "0.5", "weight of the view-alignment loss"},
    ConfigKey{"expert.gamma_debias", "1.0", "weight of the reweighted classification loss"},
    ConfigKey{"expert.q", "0.5", "inverse-frequency exponent"},
    ConfigKey{"expert.mixup", "1", "mix views before the forward pass"},
    ConfigKey{"expert.mixup_alpha", "1.0", "Beta(a, a) mixing coefficient"},
    ConfigKey{"expert.crop_pad", "2", "padding of the random crop"},
    ConfigKey{"expert.lr", "0.05", "expert learning rate"},
    ConfigKey{"expert.momentum", "0.9", "expert SGD momentum"},
    ConfigKey{"expert.weight_decay", "0.0005", "expert weight decay"},
    ConfigKey{"expert.shared", "0", "1: the teacher reuses the observer checkpoint"},
    ConfigKey{"recal.batch_size", "128", "batch size of the statistics pass"},
    ConfigKey{"recal.total_variance", "0", "add between-class spread to the global variance"},
    ConfigKey{"init.ipc", "10", "synthetic images per class"},
    ConfigKey{"init.n_aug", "8", "augmented candidates per real image"},
    ConfigKey{"init.regen_batches", "3", "extra candidate batches for exhausted classes"},
    ConfigKey{"init.area_min", "0.3", "smallest crop area fraction"},
    ConfigKey{"init.area_max", "1.0", "largest crop area fraction"},
    ConfigKey{"recovery.iterations", "1000", "statistics-matching iterations"},
    ConfigKey{"recovery.lr", "0.05", "pixel learning rate"},
    ConfigKey{"recovery.optimizer", "adam", "adam | sgd"},
    ConfigKey{"recovery.class_weight", "1.0", "weight of the class-wise alignment term"},
    ConfigKey{"recovery.cosine", "1", "cosine learning-rate decay over the iterations"},
    ConfigKey{"eval.epochs", "200", "student training epochs"},
    ConfigKey{"eval.batch_size", "50", "student batch size"},
    ConfigKey{"eval.kappa1", "0.1", "hard-label cross-entropy weight"},
    ConfigKey{"eval.kappa2", "1.0", "soft-label squared-error weight"},
    ConfigKey{"eval.logit_space", "0", "compare soft labels in log space"},
    ConfigKey{"eval.lr", "0.05", "student learning rate"},
    ConfigKey{"eval.momentum", "0.9", "student SGD momentum"},
    ConfigKey{"eval.weight_decay", "0.0005", "student weight decay"},
    ConfigKey{"eval.seeds", "0,1,2", "comma-separated student seeds"},
    ConfigKey{"ablation.no_debias", "0", "train experts with plain cross-entropy"},
    ConfigKey{"ablation.no_recalibration", "0", "align to the observer's running BN statistics"},
    ConfigKey{"ablation.naive_init", "0", "initialize from random real crops"},
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

OptimizerConfig::Kind optimizer_kind(const std::string& v) {
  if (v == "adam") return OptimizerConfig::Kind::kAdam;
  if (v == "sgd") return OptimizerConfig::Kind::kSgd;
  fail(ErrorCode::kConfig, "unknown optimizer '" + v + "'");
}

}  // namespace

std::span<const ConfigKey> config_keys() { return kKeys; }

PipelineConfig::PipelineConfig() {
  for (const auto& k : kKeys) values_[k.name] = k.default_value;
}

PipelineConfig PipelineConfig::parse(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::kConfig, "config line " + std::to_string(lineno) + ": expected key=value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  try {
    return parse(binio::read_text(path));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kIo) fail(ErrorCode::kConfig, e.what());
    throw;
  }
}

void PipelineConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::kConfig, "unknown config key '" + key + "'");
  it->second = value;
}

const std::string& PipelineConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) fail(ErrorCode::kConfig, "unknown config key '" + key + "'");
  return it->second;
}

std::string PipelineConfig::to_text() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << '=' << v << '\n';
  return os.str();
}

std::int64_t PipelineConfig::get_int(const std::string& key) const {
  const auto& v = get(key);
  std::int64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    fail(ErrorCode::kConfig, "config key '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

double PipelineConfig::get_double(const std::string& key) const {
  const auto& v = get(key);
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::logic_error&) {
  }
  fail(ErrorCode::kConfig, "config key '" + key + "': expected a number, got '" + v + "'");
}

bool PipelineConfig::get_bool(const std::string& key) const {
  const auto& v = get(key);
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  fail(ErrorCode::kConfig, "config key '" + key + "': expected 0 or 1, got '" + v + "'");
}

std::uint64_t PipelineConfig::seed() const {
  const auto s = get_int("seed");
  if (s < 0) fail(ErrorCode::kConfig, "seed must be >= 0");
  return static_cast<std::uint64_t>(s);
}

std::uint64_t PipelineConfig::derived_seed(std::uint64_t stream) const { return Rng::mix(seed(), stream); }

std::string PipelineConfig::output_dir() const { return get("output_dir"); }
bool PipelineConfig::deterministic() const { return get_bool("deterministic"); }
bool PipelineConfig::no_debias() const { return get_bool("ablation.no_debias"); }
bool PipelineConfig::no_recalibration() const { return get_bool("ablation.no_recalibration"); }
bool PipelineConfig::naive_init() const { return get_bool("ablation.naive_init"); }

ConvNetSpec PipelineConfig::network_spec() const {
  ConvNetSpec s;
  s.depth = static_cast<int>(get_int("model.depth"));
  s.width = static_cast<int>(get_int("model.width"));
  s.channels = static_cast<int>(get_int("data.channels"));
  s.height = static_cast<int>(get_int("data.height"));
  s.image_width = static_cast<int>(get_int("data.width"));
  s.num_classes = static_cast<int>(get_int("data.num_classes"));
  return s;
}

LongTailSpec PipelineConfig::long_tail_spec() const {
  LongTailSpec s;
  s.num_classes = static_cast<int>(get_int("data.num_classes"));
  s.largest_class_count = static_cast<int>(get_int("lt.largest_class_count"));
  s.imbalance_factor = get_double("lt.imbalance_factor");
  s.seed = derived_seed(2);
  return s;
}

ExpertTrainConfig PipelineConfig::expert_config(ExpertRole role) const {
  ExpertTrainConfig c;
  c.iterations = static_cast<int>(get_int("expert.iterations"));
  c.batch_size = static_cast<int>(get_int("expert.batch_size"));
  c.gamma_robust = get_double("expert.gamma_robust");
  c.gamma_debias = get_double("expert.gamma_debias");
  c.q = get_double("expert.q");
  c.mixup = get_bool("expert.mixup");
  c.mixup_alpha = get_double("expert.mixup_alpha");
  c.crop_pad = static_cast<int>(get_int("expert.crop_pad"));
  c.optimizer.kind = OptimizerConfig::Kind::kSgd;
  c.optimizer.lr = get_double("expert.lr");
  c.optimizer.momentum = get_double("expert.momentum");
  c.optimizer.weight_decay = get_double("expert.weight_decay");
  c.seed = derived_seed(role == ExpertRole::kObserver || get_bool("expert.shared") ? 3 : 4);
  if (no_debias()) {
    c.gamma_robust = 0.0;
    c.q = 0.0;
    c.mixup = false;
  }
  return c;
}

std::size_t PipelineConfig::recal_batch_size() const {
  const auto b = get_int("recal.batch_size");
  if (b < 1) fail(ErrorCode::kConfig, "recal.batch_size must be >= 1");
  return static_cast<std::size_t>(b);
}

FinalizeOptions PipelineConfig::finalize_options() const { return {get_bool("recal.total_variance")}; }

InitConfig PipelineConfig::init_config() const {
  InitConfig c;
  c.ipc = static_cast<int>(get_int("init.ipc"));
  c.n_aug = static_cast<int>(get_int("init.n_aug"));
  c.regen_batches = static_cast<int>(get_int("init.regen_batches"));
  c.crop.area_min = get_double("init.area_min");
  c.crop.area_max = get_double("init.area_max");
  c.seed = derived_seed(5);
  return c;
}

RecoveryConfig PipelineConfig::recovery_config() const {
  RecoveryConfig c;
  c.iterations = static_cast<int>(get_int("recovery.iterations"));
  c.learning_rate = get_double("recovery.lr");
  c.optimizer = optimizer_kind(get("recovery.optimizer"));
  c.class_weight = get_double("recovery.class_weight");
  c.cosine_schedule = get_bool("recovery.cosine");
  c.seed = derived_seed(6);
  return c;
}

std::vector<std::uint64_t> PipelineConfig::eval_seeds() const {
  std::vector<std::uint64_t> out;
  std::istringstream in(get("eval.seeds"));
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || ec != std::errc() || p != item.data() + item.size())
      fail(ErrorCode::kConfig, "eval.seeds: expected comma-separated non-negative integers");
    out.push_back(v);
  }
  if (out.empty()) fail(ErrorCode::kConfig, "eval.seeds: at least one seed required");
  return out;
}

StudentConfig PipelineConfig::student_config(std::uint64_t eval_seed) const {
  StudentConfig c;
  c.epochs = static_cast<int>(get_int("eval.epochs"));
  c.batch_size = static_cast<int>(get_int("eval.batch_size"));
  c.kappa1 = get_double("eval.kappa1");
  c.kappa2 = get_double("eval.kappa2");
  c.logit_space = get_bool("eval.logit_space");
  c.optimizer.kind = OptimizerConfig::Kind::kSgd;
  c.optimizer.lr = get_double("eval.lr");
  c.optimizer.momentum = get_double("eval.momentum");
  c.optimizer.weight_decay = get_double("eval.weight_decay");
  c.seed = derived_seed(100 + eval_seed);
  return c;
}

void PipelineConfig::validate() const {
  try {
    seed();
    deterministic();
    no_debias();
    no_recalibration();
    naive_init();
    if (output_dir().empty()) fail(ErrorCode::kConfig, "output_dir must not be empty");
    const auto& source = get("data.source");
    if (source != "blobs" && source != "file" && source != "manifest")
      fail(ErrorCode::kConfig, "data.source must be blobs, file or manifest");
    if (source != "blobs" && !std::filesystem::is_regular_file(get("data.path")))
      fail(ErrorCode::kConfig, "data.path '" + get("data.path") + "' does not exist");
    const auto spec = network_spec();
    spec.validate();
    if (source == "blobs") {
      if (spec.num_classes > max_blob_classes())
        fail(ErrorCode::kConfig, "blobs source supports at most " + std::to_string(max_blob_classes()) + " classes");
      if (spec.channels != 1 && spec.channels != 3) fail(ErrorCode::kConfig, "blobs source needs 1 or 3 channels");
      if (get_int("data.blobs_per_class") < 1) fail(ErrorCode::kConfig, "data.blobs_per_class must be >= 1");
      if (get("data.blob_style") != "standard" && get("data.blob_style") != "hard")
        fail(ErrorCode::kConfig, "data.blob_style must be standard or hard");
    }
    if (get_int("data.test_per_class") < 1) fail(ErrorCode::kConfig, "data.test_per_class must be >= 1");
    long_tail_spec().validate();
    expert_config(ExpertRole::kObserver).validate();
    recal_batch_size();
    finalize_options();
    init_config().validate();
    recovery_config().validate();
    for (auto s : eval_seeds()) student_config(s).validate();
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfig) throw;
    fail(ErrorCode::kConfig, std::string("invalid configuration: ") + e.what());
  }
}

}  // namespace ltdd
