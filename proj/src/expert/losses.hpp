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

// Class sample frequencies r_k and reweighting sharpness q.
struct ClassFrequency {
  std::vector<double> r;
  double q = 0.5;

  void validate() const;
  // r_k^-q / sum_j r_j^-q.
  std::vector<double> normalized_weights() const;
};

// alpha(t) = (t/T)^2; the plain term is weighted by 1 - alpha.
double debias_alpha(double t, double total);

// -sum_{i=1,2} cos(z_i, sg(p_other)), averaged over the batch. p1/p2 are
// treated as constants.
template <typename T>
Tensor<T> robust_loss(const Tensor<T>& z1, const Tensor<T>& z2, const Tensor<T>& p1, const Tensor<T>& p2);

// Batch mean of alpha * sum_k w_k (-y_k log p_k) + (1 - alpha) * sum_k (-y_k log p_k),
// with w the normalized frequency weights and log clamped at 1e-12.
// probs [N,C] are softmax outputs; targets holds N*C mixed target rows.
template <typename T>
Tensor<T> debias_loss(const Tensor<T>& probs, std::span<const T> targets, const ClassFrequency& freq,
                      double t, double total);

}  // namespace ltdd
