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

#include <span>
#include <vector>

#include "core/rng.hpp"

namespace ltdd {

// Geometry of a CHW float image.
struct ImageShape {
  int channels;
  int height;
  int width;
  std::size_t numel() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(width);
  }
};

struct ResizedCropConfig {
  double area_min = 0.3;
  double area_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  double flip_prob = 0.5;

  static ResizedCropConfig identity() { return {1.0, 1.0, 1.0, 1.0, 0.0}; }
};

void hflip(std::span<float> img, const ImageShape& s);

// Shift by (dy, dx) with zero fill; equivalent to pad-then-crop.
std::vector<float> shift(std::span<const float> img, const ImageShape& s, int dy, int dx);

// Random flip and pad-`pad` random crop, the standard training augmentation.
std::vector<float> flip_crop(std::span<const float> img, const ImageShape& s, int pad, Rng& rng);

// Bilinear resample of the window [y0, y0+h) x [x0, x0+w) to the full image size.
std::vector<float> crop_resize(std::span<const float> img, const ImageShape& s, double y0, double x0,
                               double h, double w);

// Random resized crop plus optional horizontal flip. A degenerate window
// configuration raises kInvalidArgument.
std::vector<float> random_resized_crop(std::span<const float> img, const ImageShape& s,
                                       const ResizedCropConfig& cfg, Rng& rng);

}  // namespace ltdd
