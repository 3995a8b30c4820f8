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

#include "expert/losses.hpp"

#include <cmath>

#include "core/error.hpp"
#include "core/ops.hpp"

namespace ltdd {

void ClassFrequency::validate() const {
  if (r.empty()) fail(ErrorCode::kInvalidArgument, "class frequency: empty");
  for (double v : r)
    if (!(v > 0.0)) fail(ErrorCode::kInvalidArgument, "class frequency: r_k must be positive");
  if (!(q >= 0.0)) fail(ErrorCode::kInvalidArgument, "class frequency: q must be >= 0");
}

std::vector<double> ClassFrequency::normalized_weights() const {
  validate();
  std::vector<double> w(r.size());
  double total = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) total += w[k] = std::pow(r[k], -q);
  for (double& v : w) v /= total;
  return w;
}

double debias_alpha(double t, double total) {
  if (!(total > 0.0)) fail(ErrorCode::kInvalidArgument, "debias schedule: T must be positive");
  if (t < 0.0 || t > total) fail(ErrorCode::kInvalidArgument, "debias schedule: t must lie in [0, T]");
  const double x = t / total;
  return x * x;
}

template <typename T>
Tensor<T> robust_loss(const Tensor<T>& z1, const Tensor<T>& z2, const Tensor<T>& p1, const Tensor<T>& p2) {
  if (z1.shape() != z2.shape() || z1.shape() != p1.shape() || z1.shape() != p2.shape())
    fail(ErrorCode::kInvalidArgument, "robust_loss: inputs must share one shape");
  const Tensor<T> c = ops::add(ops::cosine_rows(z1, p2.detach()), ops::cosine_rows(z2, p1.detach()));
  return ops::scale(ops::mean(c), T(-1));
}

template <typename T>
Tensor<T> debias_loss(const Tensor<T>& probs, std::span<const T> targets, const ClassFrequency& freq,
                      double t, double total) {
  if (probs.rank() != 2) fail(ErrorCode::kInvalidArgument, "debias_loss: probs must be [N,C]");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (targets.size() != n * c) fail(ErrorCode::kInvalidArgument, "debias_loss: target size mismatch");
  if (freq.r.size() != c) fail(ErrorCode::kInvalidArgument, "debias_loss: frequency size mismatch");
  const double alpha = debias_alpha(t, total);
  const auto w = freq.normalized_weights();
  std::vector<T> coef(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k)
      coef[i * c + k] = static_cast<T>(-(alpha * w[k] + (1.0 - alpha)) * targets[i * c + k] /
                                       static_cast<double>(n));
  return ops::sum(ops::mul(Tensor<T>::from(probs.shape(), std::move(coef)),
                           ops::log_clamped(probs, static_cast<T>(1e-12))));
}

template Tensor<float> robust_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                   const Tensor<float>&);
template Tensor<double> robust_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                    const Tensor<double>&);
template Tensor<float> debias_loss(const Tensor<float>&, std::span<const float>, const ClassFrequency&,
                                   double, double);
template Tensor<double> debias_loss(const Tensor<double>&, std::span<const double>, const ClassFrequency&,
                                    double, double);

}  // namespace ltdd
