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

#include "core/optim.hpp"

#include <cmath>
#include <string>

#include "core/error.hpp"

namespace ltdd {

template <typename T>
void opt_step(std::span<T> param, std::span<const T> grad, OptimizerSlot<T>& state,
              const OptimizerConfig& cfg) {
  if (param.size() != grad.size())
    fail(ErrorCode::kInvalidArgument, "opt_step: parameter/gradient size mismatch");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!std::isfinite(static_cast<double>(grad[i])))
      fail(ErrorCode::kNumeric, "opt_step: non-finite gradient at index " + std::to_string(i));

  const T lr = static_cast<T>(cfg.lr);
  const T wd = static_cast<T>(cfg.weight_decay);
  ++state.steps;
  if (cfg.kind == OptimizerConfig::Kind::kSgd) {
    if (cfg.momentum == 0.0) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        const T g = wd != T(0) ? grad[i] + wd * param[i] : grad[i];
        param[i] = param[i] - lr * g;
      }
      return;
    }
    const T mu = static_cast<T>(cfg.momentum);
    if (state.first.size() != param.size()) state.first.assign(param.size(), T(0));
    for (std::size_t i = 0; i < param.size(); ++i) {
      const T g = grad[i] + wd * param[i];
      state.first[i] = state.steps == 1 ? g : mu * state.first[i] + g;
      param[i] -= lr * state.first[i];
    }
    return;
  }
  if (state.first.size() != param.size()) {
    state.first.assign(param.size(), T(0));
    state.second.assign(param.size(), T(0));
  }
  const double b1 = cfg.beta1, b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i] + wd * param[i];
    state.first[i] = static_cast<T>(b1 * state.first[i] + (1.0 - b1) * g);
    state.second[i] = static_cast<T>(b2 * state.second[i] + (1.0 - b2) * g * g);
    const double mhat = state.first[i] / c1, vhat = state.second[i] / c2;
    param[i] -= static_cast<T>(cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
  }
}

template <typename T>
Optimizer<T>::Optimizer(std::vector<Tensor<T>> params, OptimizerConfig cfg)
    : params_(std::move(params)), slots_(params_.size()), cfg_(cfg) {}

template <typename T>
void Optimizer<T>::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    if (!p.has_grad()) continue;
    opt_step<T>(p.mutable_data(), p.grad(), slots_[i], cfg_);
  }
}

template <typename T>
void Optimizer<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template void opt_step<float>(std::span<float>, std::span<const float>, OptimizerSlot<float>&,
                              const OptimizerConfig&);
template void opt_step<double>(std::span<double>, std::span<const double>, OptimizerSlot<double>&,
                               const OptimizerConfig&);
template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace ltdd
