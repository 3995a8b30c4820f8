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
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/model.hpp"
#include "core/rng.hpp"
#include "core/optim.hpp"
#include "data/dataset.hpp"
#include "expert/losses.hpp"

namespace ltdd {

// One mixed view element: lambda * x_a + (1 - lambda) * x_b with the matching
// mixed one-hot target.
struct MixedSample {
  std::vector<float> image;
  std::vector<float> target;
  float lambda = 1.0f;
};

MixedSample mix_views(std::span<const float> x_a, std::span<const float> x_b, int y_a, int y_b,
                      int num_classes, double lambda);

// A batch of mixed views; targets are row-major [N, C].
struct MixedBatch {
  Tensor<float> images;
  std::vector<float> targets;
  std::vector<float> lambdas;
};

// Projection (features -> z) and a two-layer prediction map (z -> p), all of
// width feature_dim.
template <typename T>
struct HeadStack {
  Tensor<T> proj_w, proj_b;
  Tensor<T> pred1_w, pred1_b;
  Tensor<T> pred2_w, pred2_b;

  std::size_t dim() const { return proj_w.defined() ? proj_w.dim(0) : 0; }
  std::vector<Tensor<T>> parameters() const { return {proj_w, proj_b, pred1_w, pred1_b, pred2_w, pred2_b}; }
  Tensor<T> project(const Tensor<T>& features) const;
  Tensor<T> predict(const Tensor<T>& z) const;

  template <typename U>
  HeadStack<U> cast() const {
    return {proj_w.template cast<U>(),  proj_b.template cast<U>(),  pred1_w.template cast<U>(),
            pred1_b.template cast<U>(), pred2_w.template cast<U>(), pred2_b.template cast<U>()};
  }
};

template <typename T>
HeadStack<T> build_heads(std::size_t feature_dim, std::uint64_t seed);

struct ExpertTrainConfig {
  int iterations = 400;
  int batch_size = 64;
  double gamma_robust = 0.5;
  double gamma_debias = 1.0;
  double q = 0.5;
  bool mixup = true;
  double mixup_alpha = 1.0;
  int crop_pad = 2;
  OptimizerConfig optimizer{OptimizerConfig::Kind::kSgd, 0.05, 0.9, 5e-4};
  bool cosine_schedule = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_text() const;
  static ExpertTrainConfig from_text(const std::string& text);
};

struct TrainLogRow {
  int iteration = 0;
  double robust = 0.0;
  double debias = 0.0;
  double total = 0.0;
  double alpha = 0.0;
};

// Trained network plus the heads used only during its training.
struct ExpertCheckpoint {
  Model<float> model;
  HeadStack<float> heads;
  ExpertTrainConfig config;

  std::vector<std::uint8_t> serialize() const;
  static ExpertCheckpoint deserialize(std::span<const std::uint8_t> bytes);
  std::string hash() const;
};

ClassFrequency class_frequency(const Dataset& ds, double q);

template <typename T>
struct ExpertLoss {
  Tensor<T> robust;
  Tensor<T> debias;
  Tensor<T> total;
};

// gamma_1 * L_robust + gamma_2 * L_debias over two mixed views, the debias
// term averaged over both views. `fixed_predictions` replaces (p1, p2) by
// given constants, which is what stop-gradient means to a finite-difference
// check.
template <typename T>
ExpertLoss<T> expert_loss(Model<T>& model, const HeadStack<T>& heads, const Tensor<T>& view1,
                          const Tensor<T>& view2, std::span<const T> targets1, std::span<const T> targets2,
                          const ClassFrequency& freq, double t, double total, double gamma_robust,
                          double gamma_debias,
                          const std::optional<std::pair<Tensor<T>, Tensor<T>>>& fixed_predictions = {});

MixedBatch make_mixed_view(const Dataset& ds, std::span<const std::size_t> anchors,
                           const ExpertTrainConfig& cfg, Rng& rng);

// Training is deterministic given (dataset, spec, cfg). Aborts with kNumeric
// on a non-finite loss.
ExpertCheckpoint train_expert(const Dataset& ds, const ConvNetSpec& spec, const ExpertTrainConfig& cfg,
                              std::vector<TrainLogRow>* log = nullptr);

void write_train_log(const std::string& path, std::span<const TrainLogRow> rows);
void save_expert(const std::string& path, const ExpertCheckpoint& ckpt);
ExpertCheckpoint load_expert(const std::string& path);

}  // namespace ltdd
