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

#include "data/augment.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace ltdd {

void hflip(std::span<float> img, const ImageShape& s) {
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y) {
      float* row = img.data() + (static_cast<std::size_t>(c) * s.height + y) * s.width;
      std::reverse(row, row + s.width);
    }
}

std::vector<float> shift(std::span<const float> img, const ImageShape& s, int dy, int dx) {
  std::vector<float> out(s.numel(), 0.0f);
  for (int c = 0; c < s.channels; ++c)
    for (int y = 0; y < s.height; ++y) {
      const int sy = y + dy;
      if (sy < 0 || sy >= s.height) continue;
      for (int x = 0; x < s.width; ++x) {
        const int sx = x + dx;
        if (sx < 0 || sx >= s.width) continue;
        out[(static_cast<std::size_t>(c) * s.height + y) * s.width + x] =
            img[(static_cast<std::size_t>(c) * s.height + sy) * s.width + sx];
      }
    }
  return out;
}

std::vector<float> flip_crop(std::span<const float> img, const ImageShape& s, int pad, Rng& rng) {
  const int dy = static_cast<int>(rng.index(2 * pad + 1)) - pad;
  const int dx = static_cast<int>(rng.index(2 * pad + 1)) - pad;
  auto out = shift(img, s, dy, dx);
  if (rng.bernoulli(0.5)) hflip(out, s);
  return out;
}

std::vector<float> crop_resize(std::span<const float> img, const ImageShape& s, double y0, double x0,
                               double h, double w) {
  std::vector<float> out(s.numel());
  const double sy = h / s.height, sx = w / s.width;
  for (int y = 0; y < s.height; ++y) {
    const double fy = std::clamp(y0 + (y + 0.5) * sy - 0.5, 0.0, s.height - 1.0);
    const int y_lo = static_cast<int>(std::floor(fy));
    const int y_hi = std::min(y_lo + 1, s.height - 1);
    const double ty = fy - y_lo;
    for (int x = 0; x < s.width; ++x) {
      const double fx = std::clamp(x0 + (x + 0.5) * sx - 0.5, 0.0, s.width - 1.0);
      const int x_lo = static_cast<int>(std::floor(fx));
      const int x_hi = std::min(x_lo + 1, s.width - 1);
      const double tx = fx - x_lo;
      for (int c = 0; c < s.channels; ++c) {
        const float* p = img.data() + static_cast<std::size_t>(c) * s.height * s.width;
        auto at = [&](int yy, int xx) { return static_cast<double>(p[yy * s.width + xx]); };
        const double top = (1 - tx) * at(y_lo, x_lo) + tx * at(y_lo, x_hi);
        const double bot = (1 - tx) * at(y_hi, x_lo) + tx * at(y_hi, x_hi);
        out[(static_cast<std::size_t>(c) * s.height + y) * s.width + x] =
            static_cast<float>((1 - ty) * top + ty * bot);
      }
    }
  }
  return out;
}

std::vector<float> random_resized_crop(std::span<const float> img, const ImageShape& s,
                                       const ResizedCropConfig& cfg, Rng& rng) {
  if (!(cfg.area_min > 0.0) || cfg.area_max > 1.0 || cfg.area_min > cfg.area_max ||
      !(cfg.ratio_min > 0.0) || cfg.ratio_min > cfg.ratio_max)
    fail(ErrorCode::kInvalidArgument, "random_resized_crop: degenerate crop window configuration");
  const double area = static_cast<double>(s.height) * s.width;
  double h = s.height, w = s.width;
  // A full-area request keeps the whole frame whatever its aspect ratio.
  bool found = cfg.area_min >= 1.0;
  for (int attempt = 0; attempt < 10 && !found; ++attempt) {
    const double target = area * rng.uniform(cfg.area_min, cfg.area_max);
    const double ratio = std::exp(rng.uniform(std::log(cfg.ratio_min), std::log(cfg.ratio_max)));
    const double cw = std::sqrt(target * ratio), ch = std::sqrt(target / ratio);
    if (cw <= s.width && ch <= s.height && cw >= 1.0 && ch >= 1.0) {
      h = ch;
      w = cw;
      found = true;
    }
  }
  if (!found) {
    // Fall back to the largest centred window with an admissible aspect ratio.
    const double ratio = std::clamp(static_cast<double>(s.width) / s.height, cfg.ratio_min, cfg.ratio_max);
    w = std::min<double>(s.width, s.height * ratio);
    h = w / ratio;
  }
  const double y0 = (s.height - h) > 0 ? rng.uniform(0.0, s.height - h) : 0.0;
  const double x0 = (s.width - w) > 0 ? rng.uniform(0.0, s.width - w) : 0.0;
  auto out = crop_resize(img, s, y0, x0, h, w);
  if (cfg.flip_prob > 0.0 && rng.bernoulli(cfg.flip_prob)) hflip(out, s);
  return out;
}

}  // namespace ltdd
