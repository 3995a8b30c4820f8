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

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/binio.hpp"
#include "core/tensor.hpp"

namespace ltdd {

// ConvNet-D: depth x [3x3 conv -> BN -> ReLU -> 2x2 avg pool], then linear.
struct ConvNetSpec {
  int depth = 3;
  int width = 16;  // channels of every conv block
  int channels = 3;
  int height = 16;
  int image_width = 16;
  int num_classes = 10;
  float bn_epsilon = 1e-5f;

  void validate() const;
  int final_height() const { return height >> depth; }
  int final_width() const { return image_width >> depth; }
  int feature_dim() const { return width * final_height() * final_width(); }
  Shape input_shape(std::size_t batch) const {
    return {batch, static_cast<std::size_t>(channels), static_cast<std::size_t>(height),
            static_cast<std::size_t>(image_width)};
  }
  std::size_t image_numel() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
           static_cast<std::size_t>(image_width);
  }
  bool operator==(const ConvNetSpec&) const = default;
};

enum class ForwardMode {
  kTrain,          // BN on batch statistics, running statistics updated
  kFrozenCapture,  // BN on stored statistics, nothing mutated, batch statistics reported
  kInference,      // BN on stored statistics
};

template <typename T>
struct ConvBlock {
  Tensor<T> weight;  // [width, in, 3, 3]
  Tensor<T> bias;
  Tensor<T> gamma;
  Tensor<T> beta;
  std::vector<T> running_mean;
  std::vector<T> running_var;
};

template <typename T>
struct Model {
  ConvNetSpec spec;
  std::vector<ConvBlock<T>> blocks;
  Tensor<T> fc_weight;  // [num_classes, feature_dim]
  Tensor<T> fc_bias;

  std::size_t bn_layers() const { return blocks.size(); }
  // Trainable tensors in layer order.
  std::vector<Tensor<T>> parameters() const;
  void zero_grad() const;
  Model clone() const;

  template <typename U>
  Model<U> cast() const {
    Model<U> m;
    m.spec = spec;
    for (const auto& b : blocks) {
      m.blocks.push_back({b.weight.template cast<U>(), b.bias.template cast<U>(),
                          b.gamma.template cast<U>(), b.beta.template cast<U>(),
                          std::vector<U>(b.running_mean.begin(), b.running_mean.end()),
                          std::vector<U>(b.running_var.begin(), b.running_var.end())});
    }
    m.fc_weight = fc_weight.template cast<U>();
    m.fc_bias = fc_bias.template cast<U>();
    return m;
  }
};

template <typename T>
struct BnCapture {
  Tensor<T> input;  // BN layer input [N, width, h, w]
  Tensor<T> mean;   // batch mean per channel
  Tensor<T> var;    // batch population variance per channel
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;    // [N, num_classes]
  Tensor<T> features;  // encoder output, flattened [N, feature_dim]
  std::vector<BnCapture<T>> bn;
};

template <typename T>
Model<T> build_model(const ConvNetSpec& spec, std::uint64_t seed);

// Train mode mutates the running statistics; the other modes leave the model
// untouched. Frozen capture additionally detaches the parameters so gradients
// reach only the input.
template <typename T>
ForwardResult<T> forward(Model<T>& model, const Tensor<T>& batch, ForwardMode mode);
template <typename T>
ForwardResult<T> forward(const Model<T>& model, const Tensor<T>& batch, ForwardMode mode);

inline constexpr float kBnMomentum = 0.1f;

// Checkpoint: "LTCK", u32 version, spec fields, then parameters and BN running
// statistics as little-endian f32 in layer order.
void write_model(binio::Writer& out, const Model<float>& model);
Model<float> read_model(binio::Reader& in);
std::vector<std::uint8_t> serialize_model(const Model<float>& model);
Model<float> deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const std::string& path, const Model<float>& model);
Model<float> load_model(const std::string& path);

extern template struct Model<float>;
extern template struct Model<double>;

}  // namespace ltdd
