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
#include "core/optim.hpp"
#include "expert/expert.hpp"
#include "stats/moments.hpp"

namespace ltdd {

struct RecoveryConfig {
  int iterations = 1000;
  double learning_rate = 0.05;
  OptimizerConfig::Kind optimizer = OptimizerConfig::Kind::kAdam;
  double class_weight = 1.0;  // lambda_cw
  bool cosine_schedule = true;
  float clamp_lo = 0.0f;
  float clamp_hi = 1.0f;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_text() const;
};

template <typename T>
struct AlignmentLoss {
  Tensor<T> total;
  double global = 0.0;
  double classwise = 0.0;
  std::vector<double> mean_terms;  // per layer, global D_mu
  std::vector<double> var_terms;   // per layer, global D_sigma
};

// Global term sum_l ||mu_l(S) - mu_l(D)|| + ||var_l(S) - var_l(D)|| plus
// lambda_cw times the mean over classes present of the per-class analogue.
// `captures` are the frozen-capture BN records of the synthetic batch.
template <typename T>
AlignmentLoss<T> alignment_loss(const std::vector<BnCapture<T>>& captures, std::span<const int> labels,
                                const RealStatsBundle& bundle, double class_weight);

struct AlignmentReport {
  std::vector<double> total;                  // per iteration, before the step
  std::vector<std::vector<double>> mean_terms;  // [iteration][layer]
  std::vector<std::vector<double>> var_terms;
  double initial = 0.0;
  double final = 0.0;
  bool classwise_enabled = true;

  void write_csv(const std::string& path) const;
};

struct RecoveryResult {
  Tensor<float> images;
  AlignmentReport report;
};

RecoveryResult recover(const Tensor<float>& init, std::span<const int> labels, const ExpertCheckpoint& observer,
                       const RealStatsBundle& bundle, const RecoveryConfig& cfg);

}  // namespace ltdd
