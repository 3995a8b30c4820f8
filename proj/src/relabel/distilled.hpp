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
#include "core/optim.hpp"
#include "core/tensor.hpp"
#include "data/dataset.hpp"
#include "expert/expert.hpp"

namespace ltdd {

// Class-balanced synthetic set with teacher soft labels.
struct DistilledSet {
  int num_classes = 0;
  int ipc = 0;
  Tensor<float> images;  // [C * ipc, ch, H, W], class-major
  std::vector<int> hard_labels;
  std::vector<float> soft_labels;  // [C * ipc * C] probabilities
  std::map<std::string, std::string> provenance;

  std::size_t size() const { return hard_labels.size(); }
  std::span<const float> soft(std::size_t i) const {
    return {soft_labels.data() + i * static_cast<std::size_t>(num_classes), static_cast<std::size_t>(num_classes)};
  }
  std::vector<int> soft_argmax() const;
  // Exactly ipc per class, soft labels sum to 1 within 1e-5.
  void validate() const;
};

// Directory layout: images.bin, hard_labels.bin, soft_labels.bin,
// provenance.txt, report.csv (per-sample hard label vs. soft-label argmax).
void save_distilled(const std::string& dir, const DistilledSet& ds);
DistilledSet load_distilled(const std::string& dir);
// Hash over the three binary files and the provenance text.
std::string distilled_hash(const std::string& dir);

// Softmax of the teacher's inference-mode logits, one row per image.
std::vector<float> relabel(const ExpertCheckpoint& teacher, const Tensor<float>& images,
                           std::size_t batch_size = 256);

// kappa1 * CE(softmax(s), y) + kappa2 * ||y_soft - softmax(s)||^2, batch mean.
// With logit_space the second term compares log y_soft with the student's
// log-softmax instead.
template <typename T>
Tensor<T> match_loss(const Tensor<T>& logits, std::span<const int> hard, std::span<const float> soft, double kappa1,
                     double kappa2, bool logit_space = false);

struct StudentConfig {
  int epochs = 200;
  int batch_size = 50;
  double kappa1 = 0.1;
  double kappa2 = 1.0;
  bool logit_space = false;
  int crop_pad = 2;
  OptimizerConfig optimizer{OptimizerConfig::Kind::kSgd, 0.05, 0.9, 5e-4};
  bool cosine_schedule = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_text() const;
};

struct StudentLogRow {
  int epoch = 0;
  double loss = 0.0;  // mean over the epoch's batches
};

Model<float> train_student(const DistilledSet& distilled, const ConvNetSpec& spec, const StudentConfig& cfg,
                           std::vector<StudentLogRow>* log = nullptr);

struct EvalReport {
  std::string architecture;
  std::vector<std::uint64_t> seeds;
  std::vector<double> overall_per_seed;
  std::vector<double> balanced_per_seed;
  std::vector<std::vector<double>> per_class_per_seed;
  double overall = 0.0;   // means over seeds
  double balanced = 0.0;
  std::vector<double> per_class;

  std::string to_text() const;
  static EvalReport from_text(const std::string& text);
};

std::string architecture_name(const ConvNetSpec& spec);

// Single-seed report over a class-balanced test set.
EvalReport evaluate(const Model<float>& student, const Dataset& test, std::uint64_t seed = 0,
                    std::size_t batch_size = 256);
// Seed-wise concatenation with averaged headline numbers.
EvalReport combine_reports(std::span<const EvalReport> reports);

void save_eval(const std::string& path, const EvalReport& r);
EvalReport load_eval(const std::string& path);

}  // namespace ltdd
