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

#include "core/model.hpp"

#include <cmath>

#include "core/error.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"

namespace ltdd {

void ConvNetSpec::validate() const {
  if (depth < 1) fail(ErrorCode::kInvalidArgument, "ConvNetSpec: depth must be >= 1");
  if (width < 1 || channels < 1 || height < 1 || image_width < 1)
    fail(ErrorCode::kInvalidArgument, "ConvNetSpec: dimensions must be positive");
  if (num_classes < 2) fail(ErrorCode::kInvalidArgument, "ConvNetSpec: num_classes must be >= 2");
  if (!(bn_epsilon > 0.0f)) fail(ErrorCode::kInvalidArgument, "ConvNetSpec: bn_epsilon must be > 0");
  if (depth > 30 || final_height() < 1 || final_width() < 1)
    fail(ErrorCode::kInvalidArgument, "ConvNetSpec: input too small for depth " + std::to_string(depth));
}

template <typename T>
std::vector<Tensor<T>> Model<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (const auto& b : blocks) {
    out.push_back(b.weight);
    out.push_back(b.bias);
    out.push_back(b.gamma);
    out.push_back(b.beta);
  }
  out.push_back(fc_weight);
  out.push_back(fc_bias);
  return out;
}

template <typename T>
void Model<T>::zero_grad() const {
  for (auto p : parameters()) p.zero_grad();
}

template <typename T>
Model<T> Model<T>::clone() const {
  Model m;
  m.spec = spec;
  for (const auto& b : blocks)
    m.blocks.push_back({b.weight.clone(), b.bias.clone(), b.gamma.clone(), b.beta.clone(),
                        b.running_mean, b.running_var});
  m.fc_weight = fc_weight.clone();
  m.fc_bias = fc_bias.clone();
  return m;
}

namespace {

template <typename T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> data(shape_numel(shape));
  for (T& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(data), true);
}

template <typename T>
ForwardResult<T> forward_impl(const Model<T>& model, std::vector<ConvBlock<T>>* mutable_blocks,
                              const Tensor<T>& batch, ForwardMode mode) {
  const auto& spec = model.spec;
  if (batch.rank() != 4 || batch.dim(1) != static_cast<std::size_t>(spec.channels) ||
      batch.dim(2) != static_cast<std::size_t>(spec.height) ||
      batch.dim(3) != static_cast<std::size_t>(spec.image_width))
    fail(ErrorCode::kInvalidArgument, "forward: batch shape " + shape_string(batch.shape()) +
                                          " does not match model input " +
                                          shape_string(spec.input_shape(0)));
  const std::size_t n = batch.dim(0);
  if (n == 0) fail(ErrorCode::kInvalidArgument, "forward: empty batch");

  const bool frozen = mode == ForwardMode::kFrozenCapture;
  auto param = [frozen](const Tensor<T>& p) { return frozen ? p.detach() : p; };
  const T eps = static_cast<T>(spec.bn_epsilon);

  ForwardResult<T> out;
  Tensor<T> h = batch;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& blk = model.blocks[l];
    Tensor<T> pre = ops::conv2d(h, param(blk.weight), param(blk.bias), 1);
    Tensor<T> mean = ops::channel_mean(pre);
    Tensor<T> var = ops::channel_var(pre);
    Tensor<T> normed;
    if (mode == ForwardMode::kTrain) {
      normed = ops::bn_normalize(pre, mean, var, eps);
      auto& rb = (*mutable_blocks)[l];
      const std::size_t count = pre.numel() / pre.dim(1);
      const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T(1);
      const T m = static_cast<T>(kBnMomentum);
      for (std::size_t c = 0; c < rb.running_mean.size(); ++c) {
        rb.running_mean[c] = (T(1) - m) * rb.running_mean[c] + m * mean.data()[c];
        rb.running_var[c] = (T(1) - m) * rb.running_var[c] + m * var.data()[c] * unbias;
      }
    } else {
      const std::size_t w = blk.running_mean.size();
      normed = ops::bn_normalize(pre, Tensor<T>::from({w}, blk.running_mean),
                                 Tensor<T>::from({w}, blk.running_var), eps);
    }
    out.bn.push_back({pre, mean, var});
    h = ops::avg_pool2(ops::relu(ops::channel_affine(normed, param(blk.gamma), param(blk.beta))));
  }
  out.features = ops::reshape(h, {n, h.numel() / n});
  out.logits = ops::linear(out.features, param(model.fc_weight), param(model.fc_bias));
  return out;
}

}  // namespace

template <typename T>
Model<T> build_model(const ConvNetSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed, 0x6d6f64656cULL);
  Model<T> m;
  m.spec = spec;
  std::size_t in = static_cast<std::size_t>(spec.channels);
  const std::size_t w = static_cast<std::size_t>(spec.width);
  for (int l = 0; l < spec.depth; ++l) {
    ConvBlock<T> b;
    b.weight = fan_in_uniform<T>({w, in, 3, 3}, in * 9, rng);
    b.bias = Tensor<T>::zeros({w}, true);
    b.gamma = Tensor<T>::full({w}, T(1), true);
    b.beta = Tensor<T>::zeros({w}, true);
    b.running_mean.assign(w, T(0));
    b.running_var.assign(w, T(1));
    m.blocks.push_back(std::move(b));
    in = w;
  }
  const std::size_t f = static_cast<std::size_t>(spec.feature_dim());
  m.fc_weight = fan_in_uniform<T>({static_cast<std::size_t>(spec.num_classes), f}, f, rng);
  m.fc_bias = Tensor<T>::zeros({static_cast<std::size_t>(spec.num_classes)}, true);
  return m;
}

template <typename T>
ForwardResult<T> forward(Model<T>& model, const Tensor<T>& batch, ForwardMode mode) {
  return forward_impl(model, &model.blocks, batch, mode);
}

template <typename T>
ForwardResult<T> forward(const Model<T>& model, const Tensor<T>& batch, ForwardMode mode) {
  if (mode == ForwardMode::kTrain)
    fail(ErrorCode::kInvalidArgument, "forward: train mode needs a mutable model");
  return forward_impl<T>(model, nullptr, batch, mode);
}

namespace {
constexpr std::uint32_t kModelVersion = 1;
}

void write_model(binio::Writer& out, const Model<float>& model) {
  const auto& s = model.spec;
  out.tag("LTCK");
  out.u32(kModelVersion);
  out.u32(static_cast<std::uint32_t>(s.depth));
  out.u32(static_cast<std::uint32_t>(s.width));
  out.u32(static_cast<std::uint32_t>(s.channels));
  out.u32(static_cast<std::uint32_t>(s.height));
  out.u32(static_cast<std::uint32_t>(s.image_width));
  out.u32(static_cast<std::uint32_t>(s.num_classes));
  out.f32(s.bn_epsilon);
  for (const auto& b : model.blocks) {
    out.f32s(b.weight.data());
    out.f32s(b.bias.data());
    out.f32s(b.gamma.data());
    out.f32s(b.beta.data());
    out.f32s(b.running_mean);
    out.f32s(b.running_var);
  }
  out.f32s(model.fc_weight.data());
  out.f32s(model.fc_bias.data());
}

Model<float> read_model(binio::Reader& in) {
  in.expect_tag("LTCK");
  const std::uint32_t version = in.u32();
  if (version != kModelVersion)
    fail(ErrorCode::kFormat, "checkpoint: unsupported version " + std::to_string(version));
  ConvNetSpec s;
  s.depth = static_cast<int>(in.u32());
  s.width = static_cast<int>(in.u32());
  s.channels = static_cast<int>(in.u32());
  s.height = static_cast<int>(in.u32());
  s.image_width = static_cast<int>(in.u32());
  s.num_classes = static_cast<int>(in.u32());
  s.bn_epsilon = in.f32();
  try {
    s.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint: ") + e.what());
  }
  Model<float> m = build_model<float>(s, 0);
  auto fill = [&in](Tensor<float>& t) { in.f32s(t.mutable_data()); };
  for (auto& b : m.blocks) {
    fill(b.weight);
    fill(b.bias);
    fill(b.gamma);
    fill(b.beta);
    in.f32s(b.running_mean);
    in.f32s(b.running_var);
  }
  fill(m.fc_weight);
  fill(m.fc_bias);
  return m;
}

std::vector<std::uint8_t> serialize_model(const Model<float>& model) {
  binio::Writer w;
  write_model(w, model);
  return w.take();
}

Model<float> deserialize_model(std::span<const std::uint8_t> bytes) {
  binio::Reader r(bytes, "checkpoint");
  return read_model(r);
}

void save_model(const std::string& path, const Model<float>& model) {
  binio::write_file(path, serialize_model(model));
}

Model<float> load_model(const std::string& path) { return deserialize_model(binio::read_file(path)); }

template struct Model<float>;
template struct Model<double>;
template Model<float> build_model<float>(const ConvNetSpec&, std::uint64_t);
template Model<double> build_model<double>(const ConvNetSpec&, std::uint64_t);
template ForwardResult<float> forward(Model<float>&, const Tensor<float>&, ForwardMode);
template ForwardResult<double> forward(Model<double>&, const Tensor<double>&, ForwardMode);
template ForwardResult<float> forward(const Model<float>&, const Tensor<float>&, ForwardMode);
template ForwardResult<double> forward(const Model<double>&, const Tensor<double>&, ForwardMode);

}  // namespace ltdd
