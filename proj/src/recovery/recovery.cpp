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

#include "recovery/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/ops.hpp"

namespace ltdd {

void RecoveryConfig::validate() const {
  if (iterations < 1) fail(ErrorCode::kInvalidArgument, "recovery: iterations must be >= 1");
  if (!(learning_rate > 0.0)) fail(ErrorCode::kInvalidArgument, "recovery: learning rate must be > 0");
  if (!(class_weight >= 0.0)) fail(ErrorCode::kInvalidArgument, "recovery: class-wise weight must be >= 0");
  if (!(clamp_lo < clamp_hi)) fail(ErrorCode::kInvalidArgument, "recovery: empty clamp range");
}

std::string RecoveryConfig::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17) << "iterations=" << iterations << '\n'
     << "lr=" << learning_rate << '\n'
     << "optimizer=" << (optimizer == OptimizerConfig::Kind::kAdam ? "adam" : "sgd") << '\n'
     << "class_weight=" << class_weight << '\n'
     << "cosine_schedule=" << (cosine_schedule ? 1 : 0) << '\n'
     << "clamp=" << clamp_lo << ',' << clamp_hi << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

namespace {

template <typename T>
Tensor<T> constant(std::span<const float> v) {
  return Tensor<T>::from({v.size()}, std::vector<T>(v.begin(), v.end()));
}

}  // namespace

template <typename T>
AlignmentLoss<T> alignment_loss(const std::vector<BnCapture<T>>& captures, std::span<const int> labels,
                                const RealStatsBundle& bundle, double class_weight) {
  if (captures.size() != bundle.layers())
    fail(ErrorCode::kInvalidArgument, "alignment_loss: layer count differs from the bundle");
  if (class_weight < 0.0) fail(ErrorCode::kInvalidArgument, "alignment_loss: class-wise weight must be >= 0");
  if (class_weight > 0.0 && !bundle.has_class_stats)
    fail(ErrorCode::kInvalidArgument, "alignment_loss: bundle has no class-wise statistics");

  std::map<int, std::vector<std::size_t>> rows;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= bundle.num_classes)
      fail(ErrorCode::kInvalidArgument,
           "alignment_loss: class " + std::to_string(labels[i]) + " has no statistics in the bundle");
    rows[labels[i]].push_back(i);
  }
  const bool class_uniform = bundle.source != "running";
  const bool total_variance = bundle.source == "recalibrated-total";
  const bool need_classes = class_uniform || class_weight > 0.0;

  AlignmentLoss<T> out;
  Tensor<T> global = Tensor<T>::scalar(T(0));
  Tensor<T> classwise = Tensor<T>::scalar(T(0));
  for (std::size_t l = 0; l < captures.size(); ++l) {
    const auto& x = captures[l].input;
    const std::size_t ch = bundle.channels[l];
    if (x.rank() != 4 || x.dim(1) != ch || x.dim(0) != labels.size())
      fail(ErrorCode::kInvalidArgument, "alignment_loss: activation geometry differs from the bundle");

    std::vector<std::pair<int, std::pair<Tensor<T>, Tensor<T>>>> per_class;
    if (need_classes) {
      for (const auto& [c, r] : rows) {
        const auto xc = ops::select_rows(x, std::span<const std::size_t>(r));
        per_class.push_back({c, {ops::channel_mean(xc), ops::channel_var(xc)}});
      }
    }

    Tensor<T> mu, var;
    if (class_uniform) {
      const T inv = T(1) / static_cast<T>(per_class.size());
      Tensor<T> msum = per_class[0].second.first, vsum = per_class[0].second.second;
      for (std::size_t k = 1; k < per_class.size(); ++k) {
        msum = ops::add(msum, per_class[k].second.first);
        vsum = ops::add(vsum, per_class[k].second.second);
      }
      mu = ops::scale(msum, inv);
      var = ops::scale(vsum, inv);
      if (total_variance) {
        Tensor<T> spread = ops::square(ops::sub(per_class[0].second.first, mu));
        for (std::size_t k = 1; k < per_class.size(); ++k)
          spread = ops::add(spread, ops::square(ops::sub(per_class[k].second.first, mu)));
        var = ops::add(var, ops::scale(spread, inv));
      }
    } else {
      mu = ops::channel_mean(x);
      var = ops::channel_var(x);
    }
    const auto dm = ops::norm2(ops::sub(mu, constant<T>(bundle.global_mean[l])));
    const auto dv = ops::norm2(ops::sub(var, constant<T>(bundle.global_var[l])));
    out.mean_terms.push_back(static_cast<double>(dm.item()));
    out.var_terms.push_back(static_cast<double>(dv.item()));
    global = ops::add(global, ops::add(dm, dv));

    if (class_weight > 0.0) {
      for (const auto& [c, stats] : per_class) {
        const std::size_t off = static_cast<std::size_t>(c) * ch;
        const std::span<const float> cm(bundle.class_mean[l].data() + off, ch);
        const std::span<const float> cv(bundle.class_var[l].data() + off, ch);
        classwise = ops::add(classwise, ops::add(ops::norm2(ops::sub(stats.first, constant<T>(cm))),
                                                 ops::norm2(ops::sub(stats.second, constant<T>(cv)))));
      }
    }
  }
  if (class_weight > 0.0) classwise = ops::scale(classwise, T(1) / static_cast<T>(rows.size()));
  out.global = static_cast<double>(global.item());
  out.classwise = static_cast<double>(classwise.item());
  out.total = class_weight > 0.0 ? ops::add(global, ops::scale(classwise, static_cast<T>(class_weight))) : global;
  return out;
}

template AlignmentLoss<float> alignment_loss(const std::vector<BnCapture<float>>&, std::span<const int>,
                                             const RealStatsBundle&, double);
template AlignmentLoss<double> alignment_loss(const std::vector<BnCapture<double>>&, std::span<const int>,
                                              const RealStatsBundle&, double);

void AlignmentReport::write_csv(const std::string& path) const {
  std::ostringstream os;
  os << std::setprecision(9) << "iteration,total";
  const std::size_t layers = mean_terms.empty() ? 0 : mean_terms.front().size();
  for (std::size_t l = 0; l < layers; ++l) os << ",d_mean_" << l << ",d_var_" << l;
  os << '\n';
  for (std::size_t t = 0; t < total.size(); ++t) {
    os << t << ',' << total[t];
    for (std::size_t l = 0; l < layers; ++l) os << ',' << mean_terms[t][l] << ',' << var_terms[t][l];
    os << '\n';
  }
  os << "# initial=" << initial << " final=" << final << " classwise=" << (classwise_enabled ? 1 : 0) << '\n';
  binio::write_text(path, os.str());
}

RecoveryResult recover(const Tensor<float>& init, std::span<const int> labels, const ExpertCheckpoint& observer,
                       const RealStatsBundle& bundle, const RecoveryConfig& cfg) {
  cfg.validate();
  const auto& model = observer.model;
  if (init.shape() != model.spec.input_shape(labels.size()))
    fail(ErrorCode::kInvalidArgument, "recover: images do not match the observer input shape or label count");
  if (bundle.checkpoint_hash != observer.hash())
    fail(ErrorCode::kProvenance, "recover: statistics bundle was computed with a different observer");
  if (bundle.num_classes != static_cast<std::size_t>(model.spec.num_classes))
    fail(ErrorCode::kInvalidArgument, "recover: bundle class count differs from the observer");

  const double weight = bundle.has_class_stats ? cfg.class_weight : 0.0;
  auto pixels = init.detach().clone();
  pixels.set_requires_grad(true);
  OptimizerConfig ocfg;
  ocfg.kind = cfg.optimizer;
  ocfg.lr = cfg.learning_rate;
  Optimizer<float> opt({pixels}, ocfg);

  RecoveryResult res;
  res.report.classwise_enabled = weight > 0.0;
  auto evaluate = [&](int iteration) {
    auto fr = forward(model, pixels, ForwardMode::kFrozenCapture);
    auto loss = alignment_loss(fr.bn, labels, bundle, weight);
    if (!std::isfinite(loss.total.item()))
      fail(ErrorCode::kNumeric, "recover: non-finite alignment loss at iteration " + std::to_string(iteration));
    return loss;
  };
  for (int t = 0; t < cfg.iterations; ++t) {
    if (cfg.cosine_schedule)
      opt.set_lr(0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * t / cfg.iterations)));
    auto loss = evaluate(t);
    res.report.total.push_back(static_cast<double>(loss.total.item()));
    res.report.mean_terms.push_back(std::move(loss.mean_terms));
    res.report.var_terms.push_back(std::move(loss.var_terms));
    opt.zero_grad();
    loss.total.backward();
    opt.step();
    for (float& v : pixels.mutable_data()) v = std::clamp(v, cfg.clamp_lo, cfg.clamp_hi);
  }
  res.report.initial = res.report.total.front();
  res.report.final = static_cast<double>(evaluate(cfg.iterations).total.item());
  pixels.zero_grad();
  res.images = pixels.detach();
  return res;
}

}  // namespace ltdd
