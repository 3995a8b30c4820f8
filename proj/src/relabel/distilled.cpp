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

#include "relabel/distilled.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/hash.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"
#include "data/augment.hpp"

namespace ltdd {

namespace {

constexpr std::uint32_t kDistilledVersion = 1;

std::string join(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

std::vector<int> DistilledSet::soft_argmax() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto p = soft(i);
    out.push_back(static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin()));
  }
  return out;
}

void DistilledSet::validate() const {
  if (num_classes < 1 || ipc < 1) fail(ErrorCode::kInvalidArgument, "distilled set: empty");
  const std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(ipc);
  if (hard_labels.size() != n) fail(ErrorCode::kInvalidArgument, "distilled set: expected C * ipc samples");
  if (!images.defined() || images.rank() != 4 || images.dim(0) != n)
    fail(ErrorCode::kInvalidArgument, "distilled set: image tensor does not hold C * ipc images");
  if (soft_labels.size() != n * static_cast<std::size_t>(num_classes))
    fail(ErrorCode::kInvalidArgument, "distilled set: soft labels must have C entries per sample");
  std::vector<int> per_class(static_cast<std::size_t>(num_classes), 0);
  for (int y : hard_labels) {
    if (y < 0 || y >= num_classes) fail(ErrorCode::kInvalidArgument, "distilled set: hard label out of range");
    ++per_class[static_cast<std::size_t>(y)];
  }
  for (int k : per_class)
    if (k != ipc) fail(ErrorCode::kInvalidArgument, "distilled set: classes must hold exactly ipc samples");
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = soft(i);
    double s = 0.0;
    for (float v : p) {
      if (!(v >= 0.0f)) fail(ErrorCode::kInvalidArgument, "distilled set: negative or non-finite soft label");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-5) fail(ErrorCode::kInvalidArgument, "distilled set: soft label does not sum to 1");
  }
}

void save_distilled(const std::string& dir, const DistilledSet& ds) {
  ds.validate();
  std::filesystem::create_directories(dir);
  const std::size_t n = ds.size();
  {
    binio::Writer w;
    w.tag("LTDI");
    w.u32(kDistilledVersion);
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(ds.num_classes));
    w.u32(static_cast<std::uint32_t>(ds.ipc));
    for (std::size_t d = 1; d < 4; ++d) w.u32(static_cast<std::uint32_t>(ds.images.dim(d)));
    w.f32s(ds.images.data());
    binio::write_file(join(dir, "images.bin"), w.take());
  }
  {
    binio::Writer w;
    w.tag("LTDH");
    w.u32(static_cast<std::uint32_t>(n));
    for (int y : ds.hard_labels) w.u32(static_cast<std::uint32_t>(y));
    binio::write_file(join(dir, "hard_labels.bin"), w.take());
  }
  {
    binio::Writer w;
    w.tag("LTDS");
    w.u32(static_cast<std::uint32_t>(n));
    w.u32(static_cast<std::uint32_t>(ds.num_classes));
    w.f32s(ds.soft_labels);
    binio::write_file(join(dir, "soft_labels.bin"), w.take());
  }
  std::ostringstream prov;
  for (const auto& [k, v] : ds.provenance) prov << k << '=' << v << '\n';
  binio::write_text(join(dir, "provenance.txt"), prov.str());

  std::ostringstream rep;
  rep << std::setprecision(9) << "index,hard_label,soft_argmax,soft_confidence\n";
  const auto arg = ds.soft_argmax();
  for (std::size_t i = 0; i < n; ++i)
    rep << i << ',' << ds.hard_labels[i] << ',' << arg[i] << ',' << ds.soft(i)[static_cast<std::size_t>(arg[i])]
        << '\n';
  binio::write_text(join(dir, "report.csv"), rep.str());
}

DistilledSet load_distilled(const std::string& dir) {
  DistilledSet ds;
  std::size_t n = 0;
  {
    const auto bytes = binio::read_file(join(dir, "images.bin"));
    binio::Reader r(bytes, "distilled images");
    r.expect_tag("LTDI");
    if (r.u32() != kDistilledVersion) fail(ErrorCode::kFormat, "distilled images: unsupported version");
    n = r.u32();
    ds.num_classes = static_cast<int>(r.u32());
    ds.ipc = static_cast<int>(r.u32());
    Shape shape{n, 0, 0, 0};
    for (std::size_t d = 1; d < 4; ++d) shape[d] = r.u32();
    std::vector<float> px(shape_numel(shape));
    r.f32s(px);
    if (r.remaining() != 0) fail(ErrorCode::kFormat, "distilled images: trailing bytes");
    ds.images = Tensor<float>::from(shape, std::move(px));
  }
  {
    const auto bytes = binio::read_file(join(dir, "hard_labels.bin"));
    binio::Reader r(bytes, "distilled hard labels");
    r.expect_tag("LTDH");
    if (r.u32() != n) fail(ErrorCode::kFormat, "distilled hard labels: sample count mismatch");
    for (std::size_t i = 0; i < n; ++i) ds.hard_labels.push_back(static_cast<int>(r.u32()));
    if (r.remaining() != 0) fail(ErrorCode::kFormat, "distilled hard labels: trailing bytes");
  }
  {
    const auto bytes = binio::read_file(join(dir, "soft_labels.bin"));
    binio::Reader r(bytes, "distilled soft labels");
    r.expect_tag("LTDS");
    if (r.u32() != n || r.u32() != static_cast<std::uint32_t>(ds.num_classes))
      fail(ErrorCode::kFormat, "distilled soft labels: geometry mismatch");
    ds.soft_labels.resize(n * static_cast<std::size_t>(ds.num_classes));
    r.f32s(ds.soft_labels);
    if (r.remaining() != 0) fail(ErrorCode::kFormat, "distilled soft labels: trailing bytes");
  }
  for (const auto& line : split(binio::read_text(join(dir, "provenance.txt")), '\n')) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) ds.provenance[line.substr(0, eq)] = line.substr(eq + 1);
  }
  ds.validate();
  return ds;
}

std::string distilled_hash(const std::string& dir) {
  std::string acc;
  for (const char* f : {"images.bin", "hard_labels.bin", "soft_labels.bin", "provenance.txt"})
    acc += sha256_file(join(dir, f));
  return sha256_hex(acc);
}

std::vector<float> relabel(const ExpertCheckpoint& teacher, const Tensor<float>& images, std::size_t batch_size) {
  const auto& spec = teacher.model.spec;
  if (images.rank() != 4 || images.dim(1) != static_cast<std::size_t>(spec.channels) ||
      images.dim(2) != static_cast<std::size_t>(spec.height) ||
      images.dim(3) != static_cast<std::size_t>(spec.image_width))
    fail(ErrorCode::kInvalidArgument, "relabel: images do not match the teacher input shape");
  if (batch_size == 0) fail(ErrorCode::kInvalidArgument, "relabel: batch size must be >= 1");
  const std::size_t n = images.dim(0), numel = spec.image_numel();
  std::vector<float> out;
  out.reserve(n * static_cast<std::size_t>(spec.num_classes));
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t b = std::min(batch_size, n - start);
    const auto first = images.data().begin() + static_cast<std::ptrdiff_t>(start * numel);
    const auto x = Tensor<float>::from(spec.input_shape(b), std::vector<float>(first, first + static_cast<std::ptrdiff_t>(b * numel)));
    const auto p = ops::softmax_rows(forward(teacher.model, x, ForwardMode::kInference).logits);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return out;
}

template <typename T>
Tensor<T> match_loss(const Tensor<T>& logits, std::span<const int> hard, std::span<const float> soft, double kappa1,
                     double kappa2, bool logit_space) {
  if (kappa1 < 0.0 || kappa2 < 0.0) fail(ErrorCode::kInvalidArgument, "match_loss: weights must be >= 0");
  if (kappa1 == 0.0 && kappa2 == 0.0) fail(ErrorCode::kInvalidArgument, "match_loss: both weights are zero");
  if (logits.rank() != 2 || logits.dim(0) != hard.size() || soft.size() != logits.numel())
    fail(ErrorCode::kInvalidArgument, "match_loss: dimension mismatch");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  const T inv_n = T(1) / static_cast<T>(n);
  const auto logp = ops::log_softmax_rows(logits);
  Tensor<T> total;
  if (kappa1 > 0.0) {
    std::vector<T> onehot(n * c, T(0));
    for (std::size_t i = 0; i < n; ++i) {
      if (hard[i] < 0 || static_cast<std::size_t>(hard[i]) >= c)
        fail(ErrorCode::kInvalidArgument, "match_loss: hard label out of range");
      onehot[i * c + static_cast<std::size_t>(hard[i])] = T(1);
    }
    const auto ce = ops::sum(ops::mul(logp, Tensor<T>::from(logits.shape(), std::move(onehot))));
    total = ops::scale(ce, static_cast<T>(-kappa1) * inv_n);
  }
  if (kappa2 > 0.0) {
    Tensor<T> diff;
    if (logit_space) {
      std::vector<T> target(soft.size());
      for (std::size_t i = 0; i < soft.size(); ++i) target[i] = std::log(std::max(static_cast<T>(soft[i]), T(1e-12)));
      diff = ops::sub(logp, Tensor<T>::from(logits.shape(), std::move(target)));
    } else {
      diff = ops::sub(ops::softmax_rows(logits), Tensor<T>::from(logits.shape(), std::vector<T>(soft.begin(), soft.end())));
    }
    const auto l2 = ops::scale(ops::sum(ops::square(diff)), static_cast<T>(kappa2) * inv_n);
    total = total.defined() ? ops::add(total, l2) : l2;
  }
  return total;
}

template Tensor<float> match_loss(const Tensor<float>&, std::span<const int>, std::span<const float>, double, double,
                                  bool);
template Tensor<double> match_loss(const Tensor<double>&, std::span<const int>, std::span<const float>, double,
                                   double, bool);

void StudentConfig::validate() const {
  if (epochs < 1) fail(ErrorCode::kInvalidArgument, "student: epochs must be >= 1");
  if (batch_size < 2) fail(ErrorCode::kInvalidArgument, "student: batch size must be >= 2");
  if (kappa1 < 0.0 || kappa2 < 0.0 || (kappa1 == 0.0 && kappa2 == 0.0))
    fail(ErrorCode::kInvalidArgument, "student: kappa weights must be >= 0 and not both zero");
  if (crop_pad < 0) fail(ErrorCode::kInvalidArgument, "student: crop padding must be >= 0");
  if (!(optimizer.lr > 0.0)) fail(ErrorCode::kInvalidArgument, "student: learning rate must be > 0");
}

std::string StudentConfig::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17) << "epochs=" << epochs << '\n'
     << "batch_size=" << batch_size << '\n'
     << "kappa1=" << kappa1 << '\n'
     << "kappa2=" << kappa2 << '\n'
     << "logit_space=" << (logit_space ? 1 : 0) << '\n'
     << "crop_pad=" << crop_pad << '\n'
     << "optimizer=" << (optimizer.kind == OptimizerConfig::Kind::kAdam ? "adam" : "sgd") << '\n'
     << "lr=" << optimizer.lr << '\n'
     << "momentum=" << optimizer.momentum << '\n'
     << "weight_decay=" << optimizer.weight_decay << '\n'
     << "cosine_schedule=" << (cosine_schedule ? 1 : 0) << '\n'
     << "seed=" << seed << '\n';
  return os.str();
}

Model<float> train_student(const DistilledSet& distilled, const ConvNetSpec& spec, const StudentConfig& cfg,
                           std::vector<StudentLogRow>* log) {
  distilled.validate();
  cfg.validate();
  spec.validate();
  if (distilled.images.shape() != spec.input_shape(distilled.size()) || distilled.num_classes != spec.num_classes)
    fail(ErrorCode::kInvalidArgument, "train_student: distilled set does not match the student network");

  Model<float> model = build_model<float>(spec, cfg.seed);
  Optimizer<float> opt(model.parameters(), cfg.optimizer);
  Rng rng(cfg.seed, 0x73747564ULL);
  const ImageShape shape{spec.channels, spec.height, spec.image_width};
  const std::size_t n = distilled.size(), numel = shape.numel();
  const std::size_t batches = (n + static_cast<std::size_t>(cfg.batch_size) - 1) / static_cast<std::size_t>(cfg.batch_size);
  const double total_steps = static_cast<double>(cfg.epochs) * static_cast<double>(batches);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto px = distilled.images.data();

  std::size_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      // Even split so no batch is much smaller than the others.
      const std::size_t lo = b * n / batches, hi = (b + 1) * n / batches;
      std::vector<float> pixels, soft;
      std::vector<int> hard;
      for (std::size_t k = lo; k < hi; ++k) {
        const std::size_t i = order[k];
        const auto aug = flip_crop(px.subspan(i * numel, numel), shape, cfg.crop_pad, rng);
        pixels.insert(pixels.end(), aug.begin(), aug.end());
        hard.push_back(distilled.hard_labels[i]);
        const auto s = distilled.soft(i);
        soft.insert(soft.end(), s.begin(), s.end());
      }
      if (cfg.cosine_schedule)
        opt.set_lr(0.5 * cfg.optimizer.lr * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps)));
      const auto x = Tensor<float>::from(spec.input_shape(hi - lo), std::move(pixels));
      const auto logits = forward(model, x, ForwardMode::kTrain).logits;
      const auto loss = match_loss(logits, hard, soft, cfg.kappa1, cfg.kappa2, cfg.logit_space);
      const double value = loss.item();
      if (!std::isfinite(value))
        fail(ErrorCode::kNumeric, "train_student: loss diverged at epoch " + std::to_string(epoch));
      loss.backward();
      opt.step();
      opt.zero_grad();
      epoch_loss += value;
      ++step;
    }
    if (log) log->push_back({epoch, epoch_loss / static_cast<double>(batches)});
  }
  return model;
}

std::string architecture_name(const ConvNetSpec& spec) {
  return "ConvNet-D" + std::to_string(spec.depth) + "-W" + std::to_string(spec.width);
}

EvalReport evaluate(const Model<float>& student, const Dataset& test, std::uint64_t seed, std::size_t batch_size) {
  if (test.size() == 0) fail(ErrorCode::kInvalidArgument, "evaluate: empty test set");
  if (test.num_classes != student.spec.num_classes)
    fail(ErrorCode::kInvalidArgument, "evaluate: class count differs from the student");
  const auto counts = test.class_counts();
  if (std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) != counts.end() || counts.front() == 0)
    fail(ErrorCode::kInvalidArgument, "evaluate: test set is not class-balanced");
  if (batch_size == 0) fail(ErrorCode::kInvalidArgument, "evaluate: batch size must be >= 1");

  std::vector<int> pred(test.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < test.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(test.size(), start + batch_size); ++i) idx.push_back(i);
    const auto logits = forward(student, test.batch(idx), ForwardMode::kInference).logits;
    const std::size_t c = logits.dim(1);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto row = logits.data().subspan(k * c, c);
      pred[idx[k]] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
  }
  EvalReport r;
  r.architecture = architecture_name(student.spec);
  r.seeds = {seed};
  std::size_t correct = 0;
  std::vector<double> per_class;
  for (const auto& members : test.per_class_index) {
    std::size_t hit = 0;
    for (std::size_t i : members) hit += pred[i] == test.labels[i] ? 1 : 0;
    correct += hit;
    per_class.push_back(static_cast<double>(hit) / static_cast<double>(members.size()));
  }
  r.overall = static_cast<double>(correct) / static_cast<double>(test.size());
  r.balanced = std::accumulate(per_class.begin(), per_class.end(), 0.0) / static_cast<double>(per_class.size());
  r.per_class = per_class;
  r.overall_per_seed = {r.overall};
  r.balanced_per_seed = {r.balanced};
  r.per_class_per_seed = {per_class};
  return r;
}

EvalReport combine_reports(std::span<const EvalReport> reports) {
  if (reports.empty()) fail(ErrorCode::kInvalidArgument, "combine_reports: nothing to combine");
  EvalReport out;
  out.architecture = reports.front().architecture;
  for (const auto& r : reports) {
    if (r.architecture != out.architecture || r.per_class.size() != reports.front().per_class.size())
      fail(ErrorCode::kInvalidArgument, "combine_reports: reports describe different setups");
    out.seeds.insert(out.seeds.end(), r.seeds.begin(), r.seeds.end());
    out.overall_per_seed.insert(out.overall_per_seed.end(), r.overall_per_seed.begin(), r.overall_per_seed.end());
    out.balanced_per_seed.insert(out.balanced_per_seed.end(), r.balanced_per_seed.begin(), r.balanced_per_seed.end());
    out.per_class_per_seed.insert(out.per_class_per_seed.end(), r.per_class_per_seed.begin(),
                                  r.per_class_per_seed.end());
  }
  const double k = static_cast<double>(out.seeds.size());
  out.overall = std::accumulate(out.overall_per_seed.begin(), out.overall_per_seed.end(), 0.0) / k;
  out.balanced = std::accumulate(out.balanced_per_seed.begin(), out.balanced_per_seed.end(), 0.0) / k;
  out.per_class.assign(reports.front().per_class.size(), 0.0);
  for (const auto& pc : out.per_class_per_seed)
    for (std::size_t c = 0; c < pc.size(); ++c) out.per_class[c] += pc[c] / k;
  return out;
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::setprecision(17) << "architecture=" << architecture << '\n';
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    os << "seed=" << seeds[s] << ',' << overall_per_seed[s] << ',' << balanced_per_seed[s];
    for (double v : per_class_per_seed[s]) os << ',' << v;
    os << '\n';
  }
  return os.str();
}

EvalReport EvalReport::from_text(const std::string& text) {
  std::vector<EvalReport> parts;
  std::string arch;
  for (const auto& line : split(text, '\n')) {
    if (line.rfind("architecture=", 0) == 0) {
      arch = line.substr(13);
    } else if (line.rfind("seed=", 0) == 0) {
      const auto f = split(line.substr(5), ',');
      if (f.size() < 4) fail(ErrorCode::kFormat, "eval report: malformed seed row");
      EvalReport r;
      try {
        r.seeds = {std::stoull(f[0])};
        r.overall = std::stod(f[1]);
        r.balanced = std::stod(f[2]);
        for (std::size_t i = 3; i < f.size(); ++i) r.per_class.push_back(std::stod(f[i]));
      } catch (const std::logic_error&) {
        fail(ErrorCode::kFormat, "eval report: malformed number");
      }
      r.overall_per_seed = {r.overall};
      r.balanced_per_seed = {r.balanced};
      r.per_class_per_seed = {r.per_class};
      parts.push_back(std::move(r));
    }
  }
  if (parts.empty()) fail(ErrorCode::kFormat, "eval report: no seed rows");
  for (auto& p : parts) p.architecture = arch;
  return combine_reports(parts);
}

void save_eval(const std::string& path, const EvalReport& r) { binio::write_text(path, r.to_text()); }

EvalReport load_eval(const std::string& path) { return EvalReport::from_text(binio::read_text(path)); }

}  // namespace ltdd
