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

#include "data/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/hash.hpp"
#include "core/rng.hpp"

namespace ltdd {

void LongTailSpec::validate() const {
  if (num_classes < 2) fail(ErrorCode::kInvalidArgument, "long tail: need at least 2 classes");
  if (largest_class_count < 1) fail(ErrorCode::kInvalidArgument, "long tail: n0 must be >= 1");
  if (!(imbalance_factor >= 1.0))
    fail(ErrorCode::kInvalidArgument, "long tail: imbalance factor must be >= 1");
}

std::vector<std::size_t> LongTailSpec::class_counts() const {
  validate();
  std::vector<std::size_t> out(static_cast<std::size_t>(num_classes));
  for (int c = 0; c < num_classes; ++c) {
    const double phi = std::pow(imbalance_factor, -static_cast<double>(c) / (num_classes - 1));
    const double v = std::nearbyint(static_cast<double>(largest_class_count) * phi);
    out[static_cast<std::size_t>(c)] = static_cast<std::size_t>(std::max(1.0, v));
  }
  return out;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> out(static_cast<std::size_t>(num_classes), 0);
  for (int l : labels) ++out[static_cast<std::size_t>(l)];
  return out;
}

Tensor<float> Dataset::batch(std::span<const std::size_t> idx) const {
  const std::size_t n = image_numel();
  std::vector<float> data(idx.size() * n);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= size()) fail(ErrorCode::kInvalidArgument, "dataset batch: index out of range");
    const std::uint8_t* src = images.data() + idx[r] * n;
    for (std::size_t i = 0; i < n; ++i) data[r * n + i] = static_cast<float>(src[i]) / 255.0f;
  }
  return Tensor<float>::from({idx.size(), static_cast<std::size_t>(channels),
                              static_cast<std::size_t>(height), static_cast<std::size_t>(width)},
                             std::move(data));
}

std::vector<float> Dataset::image_float(std::size_t i) const {
  auto img = image(i);
  std::vector<float> out(img.size());
  for (std::size_t k = 0; k < img.size(); ++k) out[k] = static_cast<float>(img[k]) / 255.0f;
  return out;
}

void Dataset::rebuild_index() {
  per_class_index.assign(static_cast<std::size_t>(num_classes), {});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      fail(ErrorCode::kFormat, "dataset: label " + std::to_string(labels[i]) + " out of range");
    per_class_index[static_cast<std::size_t>(labels[i])].push_back(i);
  }
}

void Dataset::validate() const {
  if (num_classes < 1 || channels < 1 || height < 1 || width < 1)
    fail(ErrorCode::kInvalidArgument, "dataset: non-positive geometry");
  if (images.size() != labels.size() * image_numel())
    fail(ErrorCode::kInvalidArgument, "dataset: pixel buffer does not match sample count");
  if (per_class_index.size() != static_cast<std::size_t>(num_classes))
    fail(ErrorCode::kInvalidArgument, "dataset: per-class index has wrong class count");
  for (std::size_t c = 0; c < per_class_index.size(); ++c)
    for (std::size_t i : per_class_index[c])
      if (i >= labels.size() || labels[i] != static_cast<int>(c))
        fail(ErrorCode::kInvalidArgument, "dataset: per-class index disagrees with labels");
}

Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  const std::size_t n = ds.image_numel();
  out.images.reserve(idx.size() * n);
  for (std::size_t i : idx) {
    if (i >= ds.size()) fail(ErrorCode::kInvalidArgument, "subset: index out of range");
    auto img = ds.image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.labels.push_back(ds.labels[i]);
  }
  out.rebuild_index();
  return out;
}

Dataset make_long_tail(const Dataset& source, const LongTailSpec& spec) {
  spec.validate();
  if (spec.num_classes != source.num_classes)
    fail(ErrorCode::kInvalidArgument, "make_long_tail: class count differs from source");
  const auto counts = spec.class_counts();
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    std::vector<std::size_t> pool = source.per_class_index[c];
    if (pool.size() < counts[c])
      fail(ErrorCode::kInvalidArgument, "make_long_tail: class " + std::to_string(c) + " has " +
                                            std::to_string(pool.size()) + " samples, needs " +
                                            std::to_string(counts[c]));
    // Partial Fisher-Yates: the first counts[c] slots are the sampled order.
    Rng rng(spec.seed, 1000 + c);
    for (std::size_t i = 0; i < counts[c]; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
    picked.insert(picked.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(counts[c]));
  }
  Dataset out = subset(source, picked);
  out.long_tail = spec;
  return out;
}

// ---------------------------------------------------------------- blobs

namespace {

constexpr int kGrid = 3;  // positions on a 3x3 grid
constexpr std::array<std::array<double, 3>, 4> kPalette{{
    {0.90, 0.15, 0.15},
    {0.15, 0.80, 0.20},
    {0.20, 0.30, 0.95},
    {0.95, 0.85, 0.10},
}};

double gray(const std::array<double, 3>& rgb) { return 0.3 * rgb[0] + 0.59 * rgb[1] + 0.11 * rgb[2]; }

void paint_blob(std::vector<double>& canvas, int channels, int h, int w, double cy, double cx,
                double radius, const std::array<double, 3>& color) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double d2 = (y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx);
      const double a = std::exp(-d2 / (2.0 * radius * radius));
      for (int c = 0; c < channels; ++c) {
        const double v = channels == 3 ? color[static_cast<std::size_t>(c)] : gray(color);
        double& px = canvas[(static_cast<std::size_t>(c) * h + y) * w + x];
        px = (1.0 - a) * px + a * v;
      }
    }
}

}  // namespace

BlobStyle BlobStyle::named(std::string_view name) {
  if (name == "standard") return {};
  if (name == "hard") return hard();
  fail(ErrorCode::kInvalidArgument, "unknown blob style '" + std::string(name) + "'");
}

int max_blob_classes() { return kGrid * kGrid * static_cast<int>(kPalette.size()); }

Dataset gen_blobs(int num_classes, int per_class, int channels, int height, int width,
                  std::uint64_t seed, const BlobStyle& style) {
  if (num_classes < 1 || per_class < 1 || channels < 1 || height < 1 || width < 1)
    fail(ErrorCode::kInvalidArgument, "gen_blobs: arguments must be positive");
  if (channels != 1 && channels != 3) fail(ErrorCode::kInvalidArgument, "gen_blobs: channels must be 1 or 3");
  if (num_classes > max_blob_classes())
    fail(ErrorCode::kInvalidArgument, "gen_blobs: at most " + std::to_string(max_blob_classes()) +
                                          " distinguishable classes");
  Dataset ds;
  ds.num_classes = num_classes;
  ds.channels = channels;
  ds.height = height;
  ds.width = width;
  const std::size_t numel = ds.image_numel();
  ds.images.reserve(static_cast<std::size_t>(num_classes) * per_class * numel);
  const double size = std::min(height, width);
  std::vector<double> canvas(numel);
  for (int c = 0; c < num_classes; ++c) {
    // gcd(9, 4) = 1, so (c mod 9, c mod 4) is unique for c < 36.
    const int pos = c % (kGrid * kGrid);
    const auto& color = kPalette[static_cast<std::size_t>(c) % kPalette.size()];
    const double py = (0.25 + 0.25 * (pos / kGrid)) * height;
    const double px = (0.25 + 0.25 * (pos % kGrid)) * width;
    Rng rng(seed, 7000 + static_cast<std::uint64_t>(c));
    for (int i = 0; i < per_class; ++i) {
      std::array<double, 3> bg;
      for (auto& v : bg) v = rng.uniform(0.2, 0.5);
      for (int ch = 0; ch < channels; ++ch)
        std::fill_n(canvas.begin() + static_cast<std::ptrdiff_t>(ch) * height * width, height * width,
                    channels == 3 ? bg[static_cast<std::size_t>(ch)] : gray(bg));
      if (rng.bernoulli(style.distractor_prob)) {
        const auto& dc = kPalette[rng.index(kPalette.size())];
        paint_blob(canvas, channels, height, width, rng.uniform(0.0, height), rng.uniform(0.0, width),
                   0.6 * style.radius * size, dc);
      }
      std::array<double, 3> col;
      for (std::size_t k = 0; k < 3; ++k)
        col[k] = std::clamp(color[k] + rng.uniform(-style.color_jitter, style.color_jitter), 0.0, 1.0);
      const double cy = py + rng.uniform(-1.0, 1.0) * style.position_jitter * height;
      const double cx = px + rng.uniform(-1.0, 1.0) * style.position_jitter * width;
      const double r = style.radius * size * rng.uniform(0.8, 1.2);
      paint_blob(canvas, channels, height, width, cy, cx, r, col);
      for (double v : canvas) {
        const double noisy = v + style.pixel_noise * rng.normal();
        ds.images.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(noisy, 0.0, 1.0) * 255.0)));
      }
      ds.labels.push_back(c);
    }
  }
  ds.rebuild_index();
  return ds;
}

// ---------------------------------------------------------------- binary I/O

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  ds.validate();
  if (ds.num_classes > 65536) fail(ErrorCode::kInvalidArgument, "dataset: labels must fit in u16");
  binio::Writer w;
  w.tag("LTDD1");
  w.u32(static_cast<std::uint32_t>(ds.size()));
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.channels));
  w.u32(static_cast<std::uint32_t>(ds.height));
  w.u32(static_cast<std::uint32_t>(ds.width));
  for (int l : ds.labels) w.u16(static_cast<std::uint16_t>(l));
  w.bytes(ds.images);
  const std::uint32_t crc = crc32(w.buffer());
  w.u32(crc);
  return w.take();
}

Dataset parse_dataset(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "dataset");
  r.expect_tag("LTDD1");
  Dataset ds;
  const std::size_t n = r.u32();
  ds.num_classes = static_cast<int>(r.u32());
  ds.channels = static_cast<int>(r.u32());
  ds.height = static_cast<int>(r.u32());
  ds.width = static_cast<int>(r.u32());
  if (ds.num_classes < 1 || ds.channels < 1 || ds.height < 1 || ds.width < 1)
    fail(ErrorCode::kFormat, "dataset: invalid geometry in header");
  r.need(n * 2 + n * ds.image_numel() + 4);
  ds.labels.resize(n);
  for (auto& l : ds.labels) l = r.u16();
  auto px = r.bytes(n * ds.image_numel());
  ds.images.assign(px.begin(), px.end());
  const std::size_t body = r.position();
  const std::uint32_t stored = r.u32();
  if (r.remaining() != 0) fail(ErrorCode::kFormat, "dataset: trailing bytes");
  if (crc32(bytes.first(body)) != stored) fail(ErrorCode::kFormat, "dataset: checksum mismatch");
  ds.rebuild_index();
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) { binio::write_file(path, serialize_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return parse_dataset(binio::read_file(path)); }

std::string dataset_hash(const Dataset& ds) { return sha256_hex(serialize_dataset(ds)); }

Dataset load_manifest(const std::string& csv_path, int channels, int height, int width, int num_classes) {
  std::ifstream in(csv_path);
  if (!in) fail(ErrorCode::kIo, "cannot open manifest " + csv_path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("path,label", 0) != 0)
    fail(ErrorCode::kFormat, "manifest: expected header `path,label`");
  const auto dir = std::filesystem::path(csv_path).parent_path();
  Dataset ds;
  ds.channels = channels;
  ds.height = height;
  ds.width = width;
  ds.num_classes = num_classes;
  const std::size_t numel = ds.image_numel();
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) fail(ErrorCode::kFormat, "manifest: malformed row `" + line + "`");
    const std::string rel = line.substr(0, comma);
    int label = 0;
    try {
      label = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      fail(ErrorCode::kFormat, "manifest: bad label in row `" + line + "`");
    }
    if (label < 0 || label >= num_classes) fail(ErrorCode::kFormat, "manifest: label out of range");
    const auto path = std::filesystem::path(rel).is_absolute() ? std::filesystem::path(rel) : dir / rel;
    auto raw = binio::read_file(path.string());
    if (raw.size() != numel)
      fail(ErrorCode::kFormat, "manifest: " + path.string() + " has " + std::to_string(raw.size()) +
                                   " bytes, expected " + std::to_string(numel));
    ds.images.insert(ds.images.end(), raw.begin(), raw.end());
    ds.labels.push_back(label);
  }
  ds.rebuild_index();
  return ds;
}

std::pair<Dataset, Dataset> balanced_split(const Dataset& ds, std::size_t per_class, std::uint64_t seed) {
  std::vector<char> in_test(ds.size(), 0);
  for (std::size_t c = 0; c < ds.per_class_index.size(); ++c) {
    auto idx = ds.per_class_index[c];
    if (idx.size() < per_class)
      fail(ErrorCode::kInvalidArgument, "balanced_split: class " + std::to_string(c) + " has only " +
                                            std::to_string(idx.size()) + " samples");
    Rng rng(seed, 2000 + c);
    rng.shuffle(idx);
    for (std::size_t i = 0; i < per_class; ++i) in_test[idx[i]] = 1;
  }
  std::vector<std::size_t> test, rest;
  for (std::size_t i = 0; i < ds.size(); ++i) (in_test[i] ? test : rest).push_back(i);
  Dataset remainder = subset(ds, rest);
  remainder.long_tail = ds.long_tail;
  return {subset(ds, test), std::move(remainder)};
}

}  // namespace ltdd
