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

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "core/error.hpp"
#include "core/tensor.hpp"

namespace ltdd {

// Compares the reverse-mode gradient of scalar f at x against central
// differences with step eps. Returns
//   max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, floor).
// The floor keeps gradients that are exactly zero (a conv bias ahead of
// train-mode BN) from turning round-off into a large ratio.
template <typename T>
double finite_diff_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                         double eps, double floor = 1e-8) {
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidArgument, "finite_diff_check: eps must be > 0");
  Tensor<T> leaf = Tensor<T>::from(x.shape(), std::vector<T>(x.data().begin(), x.data().end()), true);
  Tensor<T> y = f(leaf);
  if (!std::isfinite(static_cast<double>(y.item())))
    fail(ErrorCode::kNumeric, "finite_diff_check: f returned a non-finite value");
  y.backward();
  std::vector<T> analytic(leaf.numel(), T(0));
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), analytic.begin());

  // Perturbed coordinates are rounded to T, so the quotient uses the step
  // actually taken.
  auto eval = [&](std::size_t i, double delta, double& taken) {
    std::vector<T> d(x.data().begin(), x.data().end());
    d[i] = static_cast<T>(static_cast<double>(d[i]) + delta);
    taken = static_cast<double>(d[i]);
    const double v = static_cast<double>(f(Tensor<T>::from(x.shape(), std::move(d))).item());
    if (!std::isfinite(v)) fail(ErrorCode::kNumeric, "finite_diff_check: f returned a non-finite value");
    return v;
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    double hi = 0.0, lo = 0.0;
    const double fp = eval(i, eps, hi);
    const double fm = eval(i, -eps, lo);
    const double numeric = (fp - fm) / (hi - lo);
    const double a = static_cast<double>(analytic[i]);
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(a - numeric) / denom);
  }
  return worst;
}

}  // namespace ltdd
