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
#include <span>
#include <string>
#include <vector>

#include "core/model.hpp"
#include "data/dataset.hpp"
#include "expert/expert.hpp"

namespace ltdd {

// Running count / mean / sum of squared deviations of one (layer, channel, class).
struct MomentCell {
  std::int64_t count = 0;
  double mean = 0.0;
  double m2 = 0.0;
};

// Per (BN layer, channel, class) moments. Each spatial position of each sample
// is one contribution.
class ClassMomentsTable {
 public:
  ClassMomentsTable() = default;
  ClassMomentsTable(std::vector<std::size_t> channels_per_layer, std::size_t num_classes);

  std::size_t layers() const { return channels_.size(); }
  std::size_t channels(std::size_t layer) const { return channels_.at(layer); }
  std::size_t classes() const { return classes_; }
  const std::vector<std::size_t>& geometry() const { return channels_; }
  bool same_geometry(const ClassMomentsTable& o) const {
    return channels_ == o.channels_ && classes_ == o.classes_;
  }

  MomentCell& at(std::size_t layer, std::size_t channel, std::size_t cls) {
    return cells_[offsets_[layer] + cls * channels_[layer] + channel];
  }
  const MomentCell& at(std::size_t layer, std::size_t channel, std::size_t cls) const {
    return cells_[offsets_[layer] + cls * channels_[layer] + channel];
  }

 private:
  std::vector<std::size_t> channels_;
  std::size_t classes_ = 0;
  std::vector<std::size_t> offsets_;
  std::vector<MomentCell> cells_;
};

ClassMomentsTable moments_table_for(const ConvNetSpec& spec);

// One step of the dynamic-momentum update: for every class c present in the
// batch, mean <- (1 - a) * mean + a * batch_mean with a = B / (N + B), and M2
// receives the parallel-merge correction. `layer_activations` are the BN
// inputs [B, ch, h, w] of every monitored layer.
void update_class_moments(ClassMomentsTable& table, std::span<const Tensor<float>> layer_activations,
                          std::span<const int> labels);

// Count-weighted combination; merging with an empty table is the identity.
ClassMomentsTable merge_moments(const ClassMomentsTable& a, const ClassMomentsTable& b);

// Recovery target: per-layer class-uniform global statistics and, when
// available, the class-wise statistics they were built from.
struct RealStatsBundle {
  std::size_t num_classes = 0;
  std::vector<std::size_t> channels;  // per layer
  std::vector<std::vector<float>> global_mean;  // [layer][channel]
  std::vector<std::vector<float>> global_var;
  bool has_class_stats = false;
  std::vector<std::vector<float>> class_mean;  // [layer][class * channels + channel]
  std::vector<std::vector<float>> class_var;
  std::string checkpoint_hash;
  std::string dataset_hash;
  std::string source;  // "recalibrated" or "running"

  std::size_t layers() const { return channels.size(); }
  std::vector<std::uint8_t> serialize() const;
  static RealStatsBundle deserialize(std::span<const std::uint8_t> bytes);
  std::string hash() const;
  bool operator==(const RealStatsBundle&) const = default;
};

struct FinalizeOptions {
  // Add the between-class spread of means to the global variance.
  bool total_variance = false;
};

// Global mean = uniform average of class means; global variance = uniform
// average of class population variances. Every cell needs count >= 2.
RealStatsBundle finalize_global(const ClassMomentsTable& table, const FinalizeOptions& opts = {});

// One frozen-capture pass over the dataset in storage order.
RealStatsBundle recalibrate(const ExpertCheckpoint& observer, const Dataset& ds, std::size_t batch_size,
                            const FinalizeOptions& opts = {});

// The observer's own running BN statistics, without class-wise entries.
RealStatsBundle running_stats_bundle(const ExpertCheckpoint& observer, const Dataset& ds);

// Fixed-momentum exponential moving average of the same per-class and global
// means, the way standard BN tracks them.
struct EmaEstimate {
  std::vector<std::vector<double>> class_mean;  // [layer][class * channels + channel]
  std::vector<std::vector<double>> global_mean;
};
EmaEstimate ema_reference(const Model<float>& model, const Dataset& ds, std::span<const std::size_t> order,
                          std::size_t batch_size, double momentum);

void save_stats(const std::string& path, const RealStatsBundle& b);
RealStatsBundle load_stats(const std::string& path);

}  // namespace ltdd
