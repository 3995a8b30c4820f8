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

#include "stats/moments.hpp"

#include <algorithm>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/hash.hpp"

namespace ltdd {

ClassMomentsTable::ClassMomentsTable(std::vector<std::size_t> channels_per_layer, std::size_t num_classes)
    : channels_(std::move(channels_per_layer)), classes_(num_classes) {
  std::size_t off = 0;
  for (std::size_t ch : channels_) {
    offsets_.push_back(off);
    off += ch * classes_;
  }
  cells_.resize(off);
}

ClassMomentsTable moments_table_for(const ConvNetSpec& spec) {
  return ClassMomentsTable(std::vector<std::size_t>(static_cast<std::size_t>(spec.depth),
                                                    static_cast<std::size_t>(spec.width)),
                           static_cast<std::size_t>(spec.num_classes));
}

namespace {

void combine(MomentCell& acc, std::int64_t n_b, double mean_b, double m2_b) {
  if (n_b == 0) return;
  const double n_a = static_cast<double>(acc.count);
  const double nb = static_cast<double>(n_b);
  const double alpha = nb / (n_a + nb);
  const double delta = mean_b - acc.mean;
  acc.mean = (1.0 - alpha) * acc.mean + alpha * mean_b;
  acc.m2 += m2_b + delta * delta * n_a * alpha;
  acc.count += n_b;
}

}  // namespace

void update_class_moments(ClassMomentsTable& table, std::span<const Tensor<float>> layer_activations,
                          std::span<const int> labels) {
  if (layer_activations.size() != table.layers())
    fail(ErrorCode::kInvalidArgument, "update_class_moments: layer count mismatch");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= table.classes())
      fail(ErrorCode::kInvalidArgument, "update_class_moments: label " + std::to_string(y) + " out of range");
  const std::size_t classes = table.classes();
  for (std::size_t l = 0; l < table.layers(); ++l) {
    const auto& act = layer_activations[l];
    const std::size_t ch = table.channels(l);
    if (act.rank() < 2 || act.dim(0) != labels.size() || act.dim(1) != ch)
      fail(ErrorCode::kInvalidArgument, "update_class_moments: activation shape " + shape_string(act.shape()) +
                                            " does not match table/labels");
    const std::size_t inner = act.numel() / (act.dim(0) * ch);
    const float* d = act.data().data();
    std::vector<double> sum(classes * ch, 0.0), ss(classes * ch, 0.0);
    std::vector<std::int64_t> samples(classes, 0);
    for (std::size_t n = 0; n < labels.size(); ++n) {
      const std::size_t c = static_cast<std::size_t>(labels[n]);
      ++samples[c];
      for (std::size_t k = 0; k < ch; ++k) {
        const float* p = d + (n * ch + k) * inner;
        double s = 0.0;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
        sum[c * ch + k] += s;
      }
    }
    for (std::size_t n = 0; n < labels.size(); ++n) {
      const std::size_t c = static_cast<std::size_t>(labels[n]);
      const double cnt = static_cast<double>(samples[c] * static_cast<std::int64_t>(inner));
      for (std::size_t k = 0; k < ch; ++k) {
        const double m = sum[c * ch + k] / cnt;
        const float* p = d + (n * ch + k) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss[c * ch + k] += (p[i] - m) * (p[i] - m);
      }
    }
    for (std::size_t c = 0; c < classes; ++c) {
      if (samples[c] == 0) continue;
      const std::int64_t cnt = samples[c] * static_cast<std::int64_t>(inner);
      for (std::size_t k = 0; k < ch; ++k)
        combine(table.at(l, k, c), cnt, sum[c * ch + k] / static_cast<double>(cnt), ss[c * ch + k]);
    }
  }
}

ClassMomentsTable merge_moments(const ClassMomentsTable& a, const ClassMomentsTable& b) {
  if (!a.same_geometry(b)) fail(ErrorCode::kInvalidArgument, "merge_moments: geometry mismatch");
  ClassMomentsTable out = a;
  for (std::size_t l = 0; l < a.layers(); ++l)
    for (std::size_t c = 0; c < a.classes(); ++c)
      for (std::size_t k = 0; k < a.channels(l); ++k) {
        const auto& cb = b.at(l, k, c);
        combine(out.at(l, k, c), cb.count, cb.mean, cb.m2);
      }
  return out;
}

RealStatsBundle finalize_global(const ClassMomentsTable& table, const FinalizeOptions& opts) {
  RealStatsBundle b;
  b.num_classes = table.classes();
  b.channels = table.geometry();
  b.has_class_stats = true;
  b.source = opts.total_variance ? "recalibrated-total" : "recalibrated";
  const std::size_t classes = table.classes();
  if (classes == 0) fail(ErrorCode::kInvalidArgument, "finalize_global: no classes");
  for (std::size_t l = 0; l < table.layers(); ++l) {
    const std::size_t ch = table.channels(l);
    std::vector<float> gm(ch), gv(ch), cm(classes * ch), cv(classes * ch);
    for (std::size_t k = 0; k < ch; ++k) {
      double sm = 0.0, sv = 0.0, smm = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        const auto& cell = table.at(l, k, c);
        if (cell.count < 2)
          fail(ErrorCode::kInvalidArgument, "finalize_global: class " + std::to_string(c) + " has " +
                                                std::to_string(cell.count) + " contributions at layer " +
                                                std::to_string(l) + " (variance undefined)");
        const double var = cell.m2 / static_cast<double>(cell.count);
        cm[c * ch + k] = static_cast<float>(cell.mean);
        cv[c * ch + k] = static_cast<float>(var);
        sm += cell.mean;
        smm += cell.mean * cell.mean;
        sv += var;
      }
      const double mean = sm / static_cast<double>(classes);
      double var = sv / static_cast<double>(classes);
      if (opts.total_variance) var += std::max(0.0, smm / static_cast<double>(classes) - mean * mean);
      gm[k] = static_cast<float>(mean);
      gv[k] = static_cast<float>(var);
    }
    b.global_mean.push_back(std::move(gm));
    b.global_var.push_back(std::move(gv));
    b.class_mean.push_back(std::move(cm));
    b.class_var.push_back(std::move(cv));
  }
  return b;
}

RealStatsBundle recalibrate(const ExpertCheckpoint& observer, const Dataset& ds, std::size_t batch_size,
                            const FinalizeOptions& opts) {
  const auto& spec = observer.model.spec;
  if (ds.channels != spec.channels || ds.height != spec.height || ds.width != spec.image_width ||
      ds.num_classes != spec.num_classes)
    fail(ErrorCode::kInvalidArgument, "recalibrate: observer architecture does not match the dataset");
  if (batch_size == 0) fail(ErrorCode::kInvalidArgument, "recalibrate: batch size must be >= 1");
  ClassMomentsTable table = moments_table_for(spec);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(ds.size(), start + batch_size); ++i) idx.push_back(i);
    const auto fr = forward(observer.model, ds.batch(idx), ForwardMode::kFrozenCapture);
    std::vector<Tensor<float>> acts;
    for (const auto& cap : fr.bn) acts.push_back(cap.input);
    std::vector<int> labels;
    for (std::size_t i : idx) labels.push_back(ds.labels[i]);
    update_class_moments(table, acts, labels);
  }
  RealStatsBundle b = finalize_global(table, opts);
  b.checkpoint_hash = observer.hash();
  b.dataset_hash = dataset_hash(ds);
  return b;
}

RealStatsBundle running_stats_bundle(const ExpertCheckpoint& observer, const Dataset& ds) {
  RealStatsBundle b;
  b.num_classes = static_cast<std::size_t>(observer.model.spec.num_classes);
  for (const auto& blk : observer.model.blocks) {
    b.channels.push_back(blk.running_mean.size());
    b.global_mean.push_back(blk.running_mean);
    b.global_var.push_back(blk.running_var);
  }
  b.has_class_stats = false;
  b.source = "running";
  b.checkpoint_hash = observer.hash();
  b.dataset_hash = dataset_hash(ds);
  return b;
}

EmaEstimate ema_reference(const Model<float>& model, const Dataset& ds, std::span<const std::size_t> order,
                          std::size_t batch_size, double momentum) {
  const std::size_t classes = static_cast<std::size_t>(ds.num_classes);
  EmaEstimate e;
  for (const auto& blk : model.blocks) {
    e.class_mean.emplace_back(classes * blk.running_mean.size(), 0.0);
    e.global_mean.emplace_back(blk.running_mean.size(), 0.0);
  }
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t end = std::min(order.size(), start + batch_size);
    std::span<const std::size_t> idx = order.subspan(start, end - start);
    const auto fr = forward(model, ds.batch(idx), ForwardMode::kFrozenCapture);
    for (std::size_t l = 0; l < fr.bn.size(); ++l) {
      const auto& act = fr.bn[l].input;
      const std::size_t ch = act.dim(1), inner = act.numel() / (act.dim(0) * ch);
      for (std::size_t k = 0; k < ch; ++k)
        e.global_mean[l][k] = (1.0 - momentum) * e.global_mean[l][k] + momentum * fr.bn[l].mean.data()[k];
      std::vector<double> sum(classes * ch, 0.0);
      std::vector<std::size_t> cnt(classes, 0);
      for (std::size_t n = 0; n < idx.size(); ++n) {
        const std::size_t c = static_cast<std::size_t>(ds.labels[idx[n]]);
        ++cnt[c];
        for (std::size_t k = 0; k < ch; ++k)
          for (std::size_t i = 0; i < inner; ++i) sum[c * ch + k] += act.data()[(n * ch + k) * inner + i];
      }
      for (std::size_t c = 0; c < classes; ++c) {
        if (cnt[c] == 0) continue;
        for (std::size_t k = 0; k < ch; ++k) {
          double& m = e.class_mean[l][c * ch + k];
          m = (1.0 - momentum) * m + momentum * sum[c * ch + k] / static_cast<double>(cnt[c] * inner);
        }
      }
    }
  }
  return e;
}

namespace {
constexpr std::uint32_t kStatsVersion = 1;
}

std::vector<std::uint8_t> RealStatsBundle::serialize() const {
  binio::Writer w;
  w.tag("LTSB");
  w.u32(kStatsVersion);
  w.u32(static_cast<std::uint32_t>(layers()));
  w.u32(static_cast<std::uint32_t>(num_classes));
  for (std::size_t ch : channels) w.u32(static_cast<std::uint32_t>(ch));
  w.u8(has_class_stats ? 1 : 0);
  for (const auto& v : global_mean) w.f32s(v);
  for (const auto& v : global_var) w.f32s(v);
  if (has_class_stats) {
    for (const auto& v : class_mean) w.f32s(v);
    for (const auto& v : class_var) w.f32s(v);
  }
  w.str(checkpoint_hash);
  w.str(dataset_hash);
  w.str(source);
  return w.take();
}

RealStatsBundle RealStatsBundle::deserialize(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "stats bundle");
  r.expect_tag("LTSB");
  if (r.u32() != kStatsVersion) fail(ErrorCode::kFormat, "stats bundle: unsupported version");
  RealStatsBundle b;
  const std::size_t layers = r.u32();
  b.num_classes = r.u32();
  for (std::size_t l = 0; l < layers; ++l) b.channels.push_back(r.u32());
  b.has_class_stats = r.u8() != 0;
  auto read_block = [&](std::vector<std::vector<float>>& dst, std::size_t mult) {
    for (std::size_t l = 0; l < layers; ++l) {
      std::vector<float> v(b.channels[l] * mult);
      r.f32s(v);
      dst.push_back(std::move(v));
    }
  };
  read_block(b.global_mean, 1);
  read_block(b.global_var, 1);
  if (b.has_class_stats) {
    read_block(b.class_mean, b.num_classes);
    read_block(b.class_var, b.num_classes);
  }
  b.checkpoint_hash = r.str();
  b.dataset_hash = r.str();
  b.source = r.str();
  if (r.remaining() != 0) fail(ErrorCode::kFormat, "stats bundle: trailing bytes");
  return b;
}

std::string RealStatsBundle::hash() const { return sha256_hex(serialize()); }

void save_stats(const std::string& path, const RealStatsBundle& b) { binio::write_file(path, b.serialize()); }

RealStatsBundle load_stats(const std::string& path) {
  return RealStatsBundle::deserialize(binio::read_file(path));
}

}  // namespace ltdd
