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

#include "core/tensor.hpp"

namespace ltdd {

struct OptimizerConfig {
  enum class Kind { kSgd, kAdam };
  Kind kind = Kind::kSgd;
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct OptimizerSlot {
  std::vector<T> first;   // momentum buffer / Adam first moment
  std::vector<T> second;  // Adam second moment
  long steps = 0;
};

// One update of `param` in place. Non-finite gradients raise ErrorCode::kNumeric
// and leave param/state untouched. Plain SGD (momentum 0, no decay) is exactly
// p - lr * g.
template <typename T>
void opt_step(std::span<T> param, std::span<const T> grad, OptimizerSlot<T>& state,
              const OptimizerConfig& cfg);

// Owns one slot per parameter tensor; parameters without a gradient are skipped.
template <typename T>
class Optimizer {
 public:
  Optimizer(std::vector<Tensor<T>> params, OptimizerConfig cfg);
  void step();
  void zero_grad();
  void set_lr(double lr) { cfg_.lr = lr; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  std::vector<Tensor<T>> params_;
  std::vector<OptimizerSlot<T>> slots_;
  OptimizerConfig cfg_;
};

extern template class Optimizer<float>;
extern template class Optimizer<double>;

}  // namespace ltdd
