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

#include <cstddef>
#include <span>
#include <vector>

#include "core/tensor.hpp"

// Differentiable tensor operations. Every op records its backward rule on the
// output node when any input requires grad. Image tensors are NCHW.
namespace ltdd::ops {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T> Tensor<T> relu(const Tensor<T>& x);
// log(max(x, floor)); zero gradient where clamped.
template <typename T> Tensor<T> log_clamped(const Tensor<T>& x, T floor);

// 2-D convolution, stride 1, zero padding `pad`, square kernel.
// x [N,Ci,H,W], w [Co,Ci,K,K], b [Co].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t pad);
// 2x2 average pooling with stride 2 (odd trailing rows/cols dropped).
template <typename T> Tensor<T> avg_pool2(const Tensor<T>& x);
// x [N,F], w [O,F], b [O] -> [N,O].
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Per-channel statistics over every axis except 1 (batch and spatial).
template <typename T> Tensor<T> channel_mean(const Tensor<T>& x);
// Population variance.
template <typename T> Tensor<T> channel_var(const Tensor<T>& x);
// (x - mean[c]) / sqrt(var[c] + eps), differentiable in all three inputs.
template <typename T>
Tensor<T> bn_normalize(const Tensor<T>& x, const Tensor<T>& mean, const Tensor<T>& var, T eps);
// x * gamma[c] + beta[c].
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta);

// Rows of x (axis 0) at the given indices, in order.
template <typename T> Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows);

template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x);
template <typename T> Tensor<T> log_softmax_rows(const Tensor<T>& x);
// Row-wise cosine similarity of two [N,D] tensors -> [N]. Zero rows throw.
template <typename T> Tensor<T> cosine_rows(const Tensor<T>& a, const Tensor<T>& b);
// Euclidean norm of all entries -> scalar. Subgradient 0 at the origin.
template <typename T> Tensor<T> norm2(const Tensor<T>& a);

}  // namespace ltdd::ops
