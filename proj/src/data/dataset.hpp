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
#include <string_view>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace ltdd {

// Exponential-decay long-tail profile: count(c) = max(1, round(n0 * beta^(-c/(C-1)))),
// rounded half to even.
struct LongTailSpec {
  int num_classes = 10;
  int largest_class_count = 200;
  double imbalance_factor = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<std::size_t> class_counts() const;
};

// 8-bit images (N x channels x H x W) with integer labels. per_class_index
// lists sample indices of each class in storage order.
struct Dataset {
  int num_classes = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> images;
  std::vector<int> labels;
  std::vector<std::vector<std::size_t>> per_class_index;
  std::optional<LongTailSpec> long_tail;  // set when produced by make_long_tail

  std::size_t size() const { return labels.size(); }
  std::size_t image_numel() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {images.data() + i * image_numel(), image_numel()};
  }
  std::vector<std::size_t> class_counts() const;
  // Pixels scaled to [0,1], shaped [idx.size(), channels, H, W].
  Tensor<float> batch(std::span<const std::size_t> idx) const;
  std::vector<float> image_float(std::size_t i) const;

  void rebuild_index();
  void validate() const;
  bool operator==(const Dataset& o) const {
    return num_classes == o.num_classes && channels == o.channels && height == o.height &&
           width == o.width && images == o.images && labels == o.labels;
  }
};

Dataset make_long_tail(const Dataset& source, const LongTailSpec& spec);

// Knobs of the procedural blob renderer.
struct BlobStyle {
  double pixel_noise = 0.15;      // std of additive Gaussian noise, [0,1] units
  double position_jitter = 0.15;  // fraction of image size
  double color_jitter = 0.22;
  double radius = 0.20;           // fraction of image size
  double distractor_prob = 0.3;   // chance of a second, random blob

  // Heavier jitter and noise; neighbouring classes start to overlap.
  static BlobStyle hard() { return {0.20, 0.20, 0.25, 0.20, 0.3}; }
  // "standard" or "hard"; anything else is kInvalidArgument.
  static BlobStyle named(std::string_view name);
};

// Number of classes the renderer can tell apart (positions x palette).
int max_blob_classes();

// Balanced dataset: class c is a blob with a class-specific position and colour
// plus per-sample jitter, optional distractor blob and pixel noise.
Dataset gen_blobs(int num_classes, int per_class, int channels, int height, int width,
                  std::uint64_t seed, const BlobStyle& style = {});

// Binary layout: "LTDD1", u32 N, C, channels, H, W, N x u16 labels,
// N*channels*H*W pixel bytes, then a u32 CRC32 of everything before it.
std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset parse_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);
std::string dataset_hash(const Dataset& ds);

// CSV manifest with header `path,label`; each path (relative to the manifest's
// directory) holds channels*H*W raw bytes.
Dataset load_manifest(const std::string& csv_path, int channels, int height, int width,
                      int num_classes);

// Exactly `per_class` samples of every class go to the first (test) set; the
// rest keep their original order in the second.
std::pair<Dataset, Dataset> balanced_split(const Dataset& ds, std::size_t per_class, std::uint64_t seed);

Dataset subset(const Dataset& ds, std::span<const std::size_t> idx);

}  // namespace ltdd
