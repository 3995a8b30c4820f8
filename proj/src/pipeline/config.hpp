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

#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "data/dataset.hpp"
#include "expert/expert.hpp"
#include "init/selector.hpp"
#include "recovery/recovery.hpp"
#include "relabel/distilled.hpp"
#include "stats/moments.hpp"

namespace ltdd {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* help;
};

// Every recognised key with its default, in documentation order.
std::span<const ConfigKey> config_keys();

enum class ExpertRole { kObserver, kTeacher };

// Flat key=value configuration with dotted section keys. Unknown keys and
// malformed values are config errors.
class PipelineConfig {
 public:
  PipelineConfig();

  static PipelineConfig parse(const std::string& text);
  static PipelineConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;
  // Non-default entries, key=value per line, sorted.
  std::string to_text() const;
  void validate() const;

  std::uint64_t seed() const;
  std::string output_dir() const;
  bool deterministic() const;
  bool no_debias() const;
  bool no_recalibration() const;
  bool naive_init() const;

  ConvNetSpec network_spec() const;
  LongTailSpec long_tail_spec() const;
  // Effective expert settings; the no-debias toggle is already applied.
  ExpertTrainConfig expert_config(ExpertRole role) const;
  std::size_t recal_batch_size() const;
  FinalizeOptions finalize_options() const;
  InitConfig init_config() const;
  RecoveryConfig recovery_config() const;
  std::vector<std::uint64_t> eval_seeds() const;
  StudentConfig student_config(std::uint64_t eval_seed) const;

  // Stable seed of a named sub-stream of the global seed.
  std::uint64_t derived_seed(std::uint64_t stream) const;

  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace ltdd
