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
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "data/augment.hpp"
#include "data/dataset.hpp"
#include "expert/expert.hpp"

namespace ltdd {

struct Candidate {
  std::size_t source_image_id = 0;  // dataset index of the real image
  std::size_t augmentation_id = 0;
  std::vector<float> image;
  double score = -std::numeric_limits<double>::infinity();  // -CE of the teacher vs. the hard label
  bool used = false;
  bool placeholder = false;
};

struct ClassPool {
  int label = 0;
  std::vector<Candidate> candidates;
};

// Class-wise candidate pool. Classes smaller than the largest one are padded
// with zero-filled placeholders (used, score -inf) so every class holds the
// same number of entries; placeholders never get selected.
struct CandidatePool {
  ImageShape shape{0, 0, 0};
  std::vector<ClassPool> classes;
  std::size_t placeholder_count = 0;
};

// n_aug seeded random-resized-crop (+ flip) variants of one image.
std::vector<std::vector<float>> gen_candidates(std::span<const float> image, const ImageShape& shape, int n_aug,
                                               const ResizedCropConfig& cfg, std::uint64_t seed);

CandidatePool build_pool(const Dataset& ds, int n_aug, const ResizedCropConfig& cfg, std::uint64_t seed,
                         bool placeholders = true);

// Fills score for every unscored non-placeholder candidate. Pure with respect
// to the teacher.
void score_pool(const ExpertCheckpoint& teacher, CandidatePool& pool, std::size_t batch_size);

struct Selection {
  int label = 0;
  std::size_t source_image_id = 0;
  std::size_t augmentation_id = 0;
  double score = 0.0;
  int round = 0;
  std::vector<float> image;
};

// Selection rounds on one class: each round every source image offers its best
// unused candidate; if the offers exceed the remaining slots the top-scoring
// ones fill them, otherwise all are taken. Ties: lower source id, then lower
// augmentation id. Stops at `slots` selections or when nothing is left.
std::vector<Selection> select_rounds(ClassPool& pool, std::size_t slots, int first_round = 0);

// select_rounds on every class with `ipc` slots. A class may come back short
// if its pool is exhausted.
std::vector<std::vector<Selection>> multi_round_select(CandidatePool& pool, int ipc);

struct InitImages {
  Tensor<float> images;  // [C * ipc, ch, H, W], class-major
  std::vector<int> labels;
  std::vector<Selection> selections;  // without pixel copies
};

InitImages assemble_init(const std::vector<std::vector<Selection>>& selections, int ipc, int num_classes,
                         const ImageShape& shape);

struct InitConfig {
  int ipc = 10;
  int n_aug = 8;
  ResizedCropConfig crop{};
  int regen_batches = 3;
  std::size_t score_batch = 256;
  std::uint64_t seed = 0;

  void validate() const;
};

// Build pool, score with the teacher, select; exhausted classes get up to
// regen_batches fresh augmentation batches before giving up.
InitImages confidence_guided_init(const ExpertCheckpoint& teacher, const Dataset& ds, const InitConfig& cfg,
                                  CandidatePool* pool_out = nullptr);

// One random crop of each of ipc distinct random real images per class. Fails
// when a class has fewer than ipc images.
InitImages random_real_init(const Dataset& ds, const InitConfig& cfg);

// ipc distinct random real images per class, unaugmented.
InitImages random_real_subset(const Dataset& ds, int ipc, std::uint64_t seed);

void write_selection_csv(const std::string& path, std::span<const Selection> selections);
void write_pool_dump(const std::string& path, const CandidatePool& pool);

}  // namespace ltdd
