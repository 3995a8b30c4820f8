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

#include "expert/expert.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/hash.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"
#include "data/augment.hpp"

namespace ltdd {

MixedSample mix_views(std::span<const float> x_a, std::span<const float> x_b, int y_a, int y_b,
                      int num_classes, double lambda) {
  if (x_a.size() != x_b.size()) fail(ErrorCode::kInvalidArgument, "mix_views: image shapes differ");
  if (!(lambda >= 0.0 && lambda <= 1.0)) fail(ErrorCode::kInvalidArgument, "mix_views: lambda outside [0,1]");
  if (y_a < 0 || y_a >= num_classes || y_b < 0 || y_b >= num_classes)
    fail(ErrorCode::kInvalidArgument, "mix_views: label out of range");
  MixedSample out;
  out.lambda = static_cast<float>(lambda);
  out.image.resize(x_a.size());
  const float la = static_cast<float>(lambda), lb = static_cast<float>(1.0 - lambda);
  for (std::size_t i = 0; i < x_a.size(); ++i) out.image[i] = la * x_a[i] + lb * x_b[i];
  out.target.assign(static_cast<std::size_t>(num_classes), 0.0f);
  out.target[static_cast<std::size_t>(y_a)] += la;
  out.target[static_cast<std::size_t>(y_b)] += lb;
  return out;
}

template <typename T>
Tensor<T> HeadStack<T>::project(const Tensor<T>& features) const {
  return ops::linear(features, proj_w, proj_b);
}

template <typename T>
Tensor<T> HeadStack<T>::predict(const Tensor<T>& z) const {
  return ops::linear(ops::relu(ops::linear(z, pred1_w, pred1_b)), pred2_w, pred2_b);
}

template <typename T>
HeadStack<T> build_heads(std::size_t feature_dim, std::uint64_t seed) {
  Rng rng(seed, 0x6865616473ULL);
  const double bound = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  auto weight = [&] {
    std::vector<T> d(feature_dim * feature_dim);
    for (T& v : d) v = static_cast<T>(rng.uniform(-bound, bound));
    return Tensor<T>::from({feature_dim, feature_dim}, std::move(d), true);
  };
  auto bias = [&] { return Tensor<T>::zeros({feature_dim}, true); };
  HeadStack<T> h;
  h.proj_w = weight();
  h.proj_b = bias();
  h.pred1_w = weight();
  h.pred1_b = bias();
  h.pred2_w = weight();
  h.pred2_b = bias();
  return h;
}

void ExpertTrainConfig::validate() const {
  if (iterations < 1) fail(ErrorCode::kInvalidArgument, "expert config: iterations must be >= 1");
  if (batch_size < 1) fail(ErrorCode::kInvalidArgument, "expert config: batch size must be >= 1");
  if (gamma_robust < 0.0 || gamma_debias < 0.0)
    fail(ErrorCode::kInvalidArgument, "expert config: loss weights must be >= 0");
  if (q < 0.0) fail(ErrorCode::kInvalidArgument, "expert config: q must be >= 0");
  if (mixup && !(mixup_alpha > 0.0)) fail(ErrorCode::kInvalidArgument, "expert config: mixup alpha must be > 0");
  if (crop_pad < 0) fail(ErrorCode::kInvalidArgument, "expert config: crop padding must be >= 0");
  if (!(optimizer.lr > 0.0)) fail(ErrorCode::kInvalidArgument, "expert config: learning rate must be > 0");
}

std::string ExpertTrainConfig::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "iterations=" << iterations << '\n'
     << "batch_size=" << batch_size << '\n'
     << "gamma_robust=" << gamma_robust << '\n'
     << "gamma_debias=" << gamma_debias << '\n'
     << "q=" << q << '\n'
     << "mixup=" << (mixup ? 1 : 0) << '\n'
     << "mixup_alpha=" << mixup_alpha << '\n'
     << "crop_pad=" << crop_pad << '\n'
     << "optimizer=" << (optimizer.kind == OptimizerConfig::Kind::kAdam ? "adam" : "sgd") << '\n'
     << "lr=" << optimizer.lr << '\n'
     << "momentum=" << optimizer.momentum << '\n'
     << "weight_decay=" << optimizer.weight_decay << '\n'
     << "cosine_schedule=" << (cosine_schedule ? 1 : 0) << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

ExpertTrainConfig ExpertTrainConfig::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const char* k) -> const std::string& {
    auto it = kv.find(k);
    if (it == kv.end()) fail(ErrorCode::kFormat, std::string("expert config: missing key ") + k);
    return it->second;
  };
  ExpertTrainConfig c;
  try {
    c.iterations = std::stoi(get("iterations"));
    c.batch_size = std::stoi(get("batch_size"));
    c.gamma_robust = std::stod(get("gamma_robust"));
    c.gamma_debias = std::stod(get("gamma_debias"));
    c.q = std::stod(get("q"));
    c.mixup = get("mixup") == "1";
    c.mixup_alpha = std::stod(get("mixup_alpha"));
    c.crop_pad = std::stoi(get("crop_pad"));
    c.optimizer.kind = get("optimizer") == "adam" ? OptimizerConfig::Kind::kAdam : OptimizerConfig::Kind::kSgd;
    c.optimizer.lr = std::stod(get("lr"));
    c.optimizer.momentum = std::stod(get("momentum"));
    c.optimizer.weight_decay = std::stod(get("weight_decay"));
    c.cosine_schedule = get("cosine_schedule") == "1";
    c.seed = std::stoull(get("seed"));
  } catch (const std::logic_error&) {
    fail(ErrorCode::kFormat, "expert config: malformed value");
  }
  return c;
}

namespace {
constexpr std::uint32_t kExpertVersion = 1;
}

std::vector<std::uint8_t> ExpertCheckpoint::serialize() const {
  binio::Writer w;
  write_model(w, model);
  w.tag("HEAD");
  w.u32(kExpertVersion);
  w.u32(static_cast<std::uint32_t>(heads.dim()));
  for (const auto& p : heads.parameters()) w.f32s(p.data());
  w.str(config.to_text());
  return w.take();
}

ExpertCheckpoint ExpertCheckpoint::deserialize(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "expert checkpoint");
  ExpertCheckpoint e;
  e.model = read_model(r);
  r.expect_tag("HEAD");
  if (r.u32() != kExpertVersion) fail(ErrorCode::kFormat, "expert checkpoint: unsupported version");
  const std::size_t dim = r.u32();
  if (dim != static_cast<std::size_t>(e.model.spec.feature_dim()))
    fail(ErrorCode::kFormat, "expert checkpoint: head width does not match encoder");
  e.heads = build_heads<float>(dim, 0);
  for (auto p : e.heads.parameters()) r.f32s(p.mutable_data());
  e.config = ExpertTrainConfig::from_text(r.str());
  if (r.remaining() != 0) fail(ErrorCode::kFormat, "expert checkpoint: trailing bytes");
  return e;
}

std::string ExpertCheckpoint::hash() const { return sha256_hex(serialize()); }

ClassFrequency class_frequency(const Dataset& ds, double q) {
  ClassFrequency f;
  f.q = q;
  const auto counts = ds.class_counts();
  for (std::size_t c : counts) f.r.push_back(static_cast<double>(c) / static_cast<double>(ds.size()));
  f.validate();
  return f;
}

template <typename T>
ExpertLoss<T> expert_loss(Model<T>& model, const HeadStack<T>& heads, const Tensor<T>& view1,
                          const Tensor<T>& view2, std::span<const T> targets1, std::span<const T> targets2,
                          const ClassFrequency& freq, double t, double total, double gamma_robust,
                          double gamma_debias,
                          const std::optional<std::pair<Tensor<T>, Tensor<T>>>& fixed_predictions) {
  auto f1 = forward(model, view1, ForwardMode::kTrain);
  auto f2 = forward(model, view2, ForwardMode::kTrain);
  ExpertLoss<T> out;
  out.debias = ops::scale(ops::add(debias_loss(ops::softmax_rows(f1.logits), targets1, freq, t, total),
                                   debias_loss(ops::softmax_rows(f2.logits), targets2, freq, t, total)),
                          T(0.5));
  out.total = ops::scale(out.debias, static_cast<T>(gamma_debias));
  if (gamma_robust > 0.0) {
    const Tensor<T> z1 = heads.project(f1.features);
    const Tensor<T> z2 = heads.project(f2.features);
    const Tensor<T> p1 = fixed_predictions ? fixed_predictions->first : heads.predict(z1);
    const Tensor<T> p2 = fixed_predictions ? fixed_predictions->second : heads.predict(z2);
    out.robust = robust_loss(z1, z2, p1, p2);
    out.total = ops::add(out.total, ops::scale(out.robust, static_cast<T>(gamma_robust)));
  } else {
    out.robust = Tensor<T>::scalar(T(0));
  }
  return out;
}

MixedBatch make_mixed_view(const Dataset& ds, std::span<const std::size_t> anchors,
                           const ExpertTrainConfig& cfg, Rng& rng) {
  const ImageShape shape{ds.channels, ds.height, ds.width};
  const std::size_t n = anchors.size(), numel = shape.numel();
  const std::size_t c = static_cast<std::size_t>(ds.num_classes);
  std::vector<std::size_t> partner(anchors.begin(), anchors.end());
  rng.shuffle(partner);
  MixedBatch out;
  std::vector<float> pixels(n * numel);
  out.targets.resize(n * c);
  out.lambdas.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto xa = flip_crop(ds.image_float(anchors[i]), shape, cfg.crop_pad, rng);
    const double lambda = cfg.mixup ? rng.beta(cfg.mixup_alpha, cfg.mixup_alpha) : 1.0;
    std::vector<float> xb = xa;
    if (cfg.mixup) xb = flip_crop(ds.image_float(partner[i]), shape, cfg.crop_pad, rng);
    const auto m = mix_views(xa, xb, ds.labels[anchors[i]], ds.labels[cfg.mixup ? partner[i] : anchors[i]],
                             ds.num_classes, lambda);
    std::copy(m.image.begin(), m.image.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i * numel));
    std::copy(m.target.begin(), m.target.end(), out.targets.begin() + static_cast<std::ptrdiff_t>(i * c));
    out.lambdas[i] = m.lambda;
  }
  out.images = Tensor<float>::from({n, static_cast<std::size_t>(ds.channels), static_cast<std::size_t>(ds.height),
                                    static_cast<std::size_t>(ds.width)},
                                   std::move(pixels));
  return out;
}

ExpertCheckpoint train_expert(const Dataset& ds, const ConvNetSpec& spec, const ExpertTrainConfig& cfg,
                              std::vector<TrainLogRow>* log) {
  cfg.validate();
  spec.validate();
  if (ds.size() == 0) fail(ErrorCode::kInvalidArgument, "train_expert: empty dataset");
  if (ds.num_classes != spec.num_classes || ds.channels != spec.channels || ds.height != spec.height ||
      ds.width != spec.image_width)
    fail(ErrorCode::kInvalidArgument, "train_expert: dataset geometry does not match the network");

  ExpertCheckpoint ck;
  ck.config = cfg;
  ck.model = build_model<float>(spec, cfg.seed);
  ck.heads = build_heads<float>(static_cast<std::size_t>(spec.feature_dim()), cfg.seed);
  const ClassFrequency freq = class_frequency(ds, cfg.q);

  auto params = ck.model.parameters();
  if (cfg.gamma_robust > 0.0)
    for (const auto& p : ck.heads.parameters()) params.push_back(p);
  Optimizer<float> opt(params, cfg.optimizer);

  Rng rng(cfg.seed, 0x747261696eULL);
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), ds.size());
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  for (int it = 0; it < cfg.iterations; ++it) {
    if (cursor + batch > order.size()) {
      rng.shuffle(order);
      cursor = 0;
    }
    std::span<const std::size_t> anchors(order.data() + cursor, batch);
    cursor += batch;
    if (cfg.cosine_schedule)
      opt.set_lr(0.5 * cfg.optimizer.lr * (1.0 + std::cos(std::numbers::pi * it / cfg.iterations)));

    const MixedBatch v1 = make_mixed_view(ds, anchors, cfg, rng);
    const MixedBatch v2 = make_mixed_view(ds, anchors, cfg, rng);
    const double t = it, total = cfg.iterations;
    auto loss = expert_loss<float>(ck.model, ck.heads, v1.images, v2.images, v1.targets, v2.targets, freq, t,
                                   total, cfg.gamma_robust, cfg.gamma_debias);
    const double value = loss.total.item();
    if (!std::isfinite(value))
      fail(ErrorCode::kNumeric, "train_expert: non-finite loss at iteration " + std::to_string(it));
    loss.total.backward();
    opt.step();
    opt.zero_grad();
    if (log) log->push_back({it, loss.robust.item(), loss.debias.item(), value, debias_alpha(t, total)});
  }
  return ck;
}

void write_train_log(const std::string& path, std::span<const TrainLogRow> rows) {
  std::ostringstream os;
  os << std::setprecision(9) << "iteration,robust,debias,total,alpha\n";
  for (const auto& r : rows)
    os << r.iteration << ',' << r.robust << ',' << r.debias << ',' << r.total << ',' << r.alpha << '\n';
  binio::write_text(path, os.str());
}

void save_expert(const std::string& path, const ExpertCheckpoint& ckpt) {
  binio::write_file(path, ckpt.serialize());
}

ExpertCheckpoint load_expert(const std::string& path) {
  return ExpertCheckpoint::deserialize(binio::read_file(path));
}

template struct HeadStack<float>;
template struct HeadStack<double>;
template HeadStack<float> build_heads<float>(std::size_t, std::uint64_t);
template HeadStack<double> build_heads<double>(std::size_t, std::uint64_t);
template ExpertLoss<float> expert_loss(Model<float>&, const HeadStack<float>&, const Tensor<float>&,
                                       const Tensor<float>&, std::span<const float>, std::span<const float>,
                                       const ClassFrequency&, double, double, double, double,
                                       const std::optional<std::pair<Tensor<float>, Tensor<float>>>&);
template ExpertLoss<double> expert_loss(Model<double>&, const HeadStack<double>&, const Tensor<double>&,
                                        const Tensor<double>&, std::span<const double>, std::span<const double>,
                                        const ClassFrequency&, double, double, double, double,
                                        const std::optional<std::pair<Tensor<double>, Tensor<double>>>&);

}  // namespace ltdd
