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

#include "init/selector.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/ops.hpp"
#include "core/rng.hpp"

namespace ltdd {

namespace {

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.source_image_id != b.source_image_id) return a.source_image_id < b.source_image_id;
  return a.augmentation_id < b.augmentation_id;
}

std::vector<Candidate> augment_image(const Dataset& ds, std::size_t sample, int n_aug, std::size_t first_aug_id,
                                     const ResizedCropConfig& cfg, std::uint64_t seed) {
  const ImageShape shape{ds.channels, ds.height, ds.width};
  auto imgs = gen_candidates(ds.image_float(sample), shape, n_aug, cfg, seed);
  std::vector<Candidate> out;
  for (std::size_t a = 0; a < imgs.size(); ++a) {
    Candidate c;
    c.source_image_id = sample;
    c.augmentation_id = first_aug_id + a;
    c.image = std::move(imgs[a]);
    out.push_back(std::move(c));
  }
  return out;
}

std::uint64_t candidate_seed(std::uint64_t seed, std::size_t sample, std::size_t batch) {
  return Rng::mix(Rng::mix(seed, sample), batch);
}

}  // namespace

std::vector<std::vector<float>> gen_candidates(std::span<const float> image, const ImageShape& shape, int n_aug,
                                               const ResizedCropConfig& cfg, std::uint64_t seed) {
  if (n_aug < 1) fail(ErrorCode::kInvalidArgument, "gen_candidates: n_aug must be >= 1");
  if (image.size() != shape.numel()) fail(ErrorCode::kInvalidArgument, "gen_candidates: image size mismatch");
  Rng rng(seed, 0x63726f70ULL);
  std::vector<std::vector<float>> out;
  for (int a = 0; a < n_aug; ++a) out.push_back(random_resized_crop(image, shape, cfg, rng));
  return out;
}

CandidatePool build_pool(const Dataset& ds, int n_aug, const ResizedCropConfig& cfg, std::uint64_t seed,
                         bool placeholders) {
  CandidatePool pool;
  pool.shape = {ds.channels, ds.height, ds.width};
  std::size_t largest = 0;
  for (const auto& idx : ds.per_class_index) largest = std::max(largest, idx.size());
  for (int c = 0; c < ds.num_classes; ++c) {
    ClassPool cp;
    cp.label = c;
    const auto& idx = ds.per_class_index[static_cast<std::size_t>(c)];
    for (std::size_t sample : idx) {
      auto cands = augment_image(ds, sample, n_aug, 0, cfg, candidate_seed(seed, sample, 0));
      std::move(cands.begin(), cands.end(), std::back_inserter(cp.candidates));
    }
    if (placeholders) {
      const std::size_t missing = (largest - idx.size()) * static_cast<std::size_t>(n_aug);
      for (std::size_t p = 0; p < missing; ++p) {
        Candidate ph;
        ph.source_image_id = ds.size() + p / static_cast<std::size_t>(n_aug);
        ph.augmentation_id = p % static_cast<std::size_t>(n_aug);
        ph.image.assign(pool.shape.numel(), 0.0f);
        ph.used = true;
        ph.placeholder = true;
        cp.candidates.push_back(std::move(ph));
      }
      pool.placeholder_count += missing;
    }
    pool.classes.push_back(std::move(cp));
  }
  return pool;
}

void score_pool(const ExpertCheckpoint& teacher, CandidatePool& pool, std::size_t batch_size) {
  const auto& spec = teacher.model.spec;
  if (pool.shape.channels != spec.channels || pool.shape.height != spec.height ||
      pool.shape.width != spec.image_width)
    fail(ErrorCode::kInvalidArgument, "score_pool: candidate shape does not match the teacher");
  if (batch_size == 0) fail(ErrorCode::kInvalidArgument, "score_pool: batch size must be >= 1");
  const std::size_t numel = pool.shape.numel();
  for (auto& cp : pool.classes) {
    std::vector<Candidate*> todo;
    for (auto& c : cp.candidates)
      if (!c.placeholder && !c.used && c.score == -std::numeric_limits<double>::infinity()) todo.push_back(&c);
    for (std::size_t start = 0; start < todo.size(); start += batch_size) {
      const std::size_t n = std::min(batch_size, todo.size() - start);
      std::vector<float> pixels(n * numel);
      for (std::size_t i = 0; i < n; ++i)
        std::copy(todo[start + i]->image.begin(), todo[start + i]->image.end(),
                  pixels.begin() + static_cast<std::ptrdiff_t>(i * numel));
      const auto x = Tensor<float>::from(spec.input_shape(n), std::move(pixels));
      const auto logp = ops::log_softmax_rows(forward(teacher.model, x, ForwardMode::kInference).logits);
      const std::size_t classes = logp.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        todo[start + i]->score = logp.data()[i * classes + static_cast<std::size_t>(cp.label)];
    }
  }
}

std::vector<Selection> select_rounds(ClassPool& pool, std::size_t slots, int first_round) {
  std::vector<Selection> out;
  int round = first_round;
  while (out.size() < slots) {
    // Best unused candidate of every source image.
    std::vector<Candidate*> offers;
    for (auto& c : pool.candidates) {
      if (c.used || c.placeholder) continue;
      auto it = std::find_if(offers.begin(), offers.end(),
                             [&](const Candidate* o) { return o->source_image_id == c.source_image_id; });
      if (it == offers.end())
        offers.push_back(&c);
      else if (ranks_before(c, **it))
        *it = &c;
    }
    if (offers.empty()) break;
    std::sort(offers.begin(), offers.end(), [](const Candidate* a, const Candidate* b) { return ranks_before(*a, *b); });
    const std::size_t take = std::min(offers.size(), slots - out.size());
    for (std::size_t i = 0; i < take; ++i) {
      Candidate* c = offers[i];
      c->used = true;
      out.push_back({pool.label, c->source_image_id, c->augmentation_id, c->score, round, c->image});
    }
    ++round;
  }
  return out;
}

std::vector<std::vector<Selection>> multi_round_select(CandidatePool& pool, int ipc) {
  if (ipc < 1) fail(ErrorCode::kInvalidArgument, "multi_round_select: ipc must be >= 1");
  std::vector<std::vector<Selection>> out;
  for (auto& cp : pool.classes) {
    const bool any_real = std::any_of(cp.candidates.begin(), cp.candidates.end(),
                                      [](const Candidate& c) { return !c.placeholder; });
    if (!any_real)
      fail(ErrorCode::kInvalidArgument, "multi_round_select: class " + std::to_string(cp.label) + " has no real images");
    out.push_back(select_rounds(cp, static_cast<std::size_t>(ipc)));
  }
  return out;
}

InitImages assemble_init(const std::vector<std::vector<Selection>>& selections, int ipc, int num_classes,
                         const ImageShape& shape) {
  if (selections.size() != static_cast<std::size_t>(num_classes))
    fail(ErrorCode::kInvalidArgument, "assemble_init: expected selections for every class");
  InitImages out;
  const std::size_t numel = shape.numel();
  std::vector<float> pixels;
  pixels.reserve(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(ipc) * numel);
  for (int c = 0; c < num_classes; ++c) {
    const auto& sel = selections[static_cast<std::size_t>(c)];
    if (sel.size() != static_cast<std::size_t>(ipc))
      fail(ErrorCode::kInvalidArgument, "assemble_init: class " + std::to_string(c) + " has " +
                                            std::to_string(sel.size()) + " of " + std::to_string(ipc) +
                                            " selections after the regeneration budget");
    for (const auto& s : sel) {
      if (s.image.size() != numel) fail(ErrorCode::kInvalidArgument, "assemble_init: image shape mismatch");
      if (std::all_of(s.image.begin(), s.image.end(), [](float v) { return v == 0.0f; }))
        fail(ErrorCode::kInvalidArgument, "assemble_init: placeholder image in selection");
      pixels.insert(pixels.end(), s.image.begin(), s.image.end());
      out.labels.push_back(c);
      Selection meta = s;
      meta.image.clear();
      out.selections.push_back(std::move(meta));
    }
  }
  const std::size_t n = out.labels.size();
  out.images = Tensor<float>::from({n, static_cast<std::size_t>(shape.channels), static_cast<std::size_t>(shape.height),
                                    static_cast<std::size_t>(shape.width)},
                                   std::move(pixels));
  return out;
}

void InitConfig::validate() const {
  if (ipc < 1) fail(ErrorCode::kInvalidArgument, "init: ipc must be >= 1");
  if (n_aug < 1) fail(ErrorCode::kInvalidArgument, "init: n_aug must be >= 1");
  if (regen_batches < 0) fail(ErrorCode::kInvalidArgument, "init: regeneration budget must be >= 0");
  if (score_batch == 0) fail(ErrorCode::kInvalidArgument, "init: scoring batch must be >= 1");
}

InitImages confidence_guided_init(const ExpertCheckpoint& teacher, const Dataset& ds, const InitConfig& cfg,
                                  CandidatePool* pool_out) {
  cfg.validate();
  CandidatePool pool = build_pool(ds, cfg.n_aug, cfg.crop, cfg.seed);
  score_pool(teacher, pool, cfg.score_batch);
  auto selections = multi_round_select(pool, cfg.ipc);
  const std::size_t ipc = static_cast<std::size_t>(cfg.ipc);
  for (std::size_t c = 0; c < selections.size(); ++c) {
    auto& sel = selections[c];
    for (int batch = 1; batch <= cfg.regen_batches && sel.size() < ipc; ++batch) {
      auto& cp = pool.classes[c];
      for (std::size_t sample : ds.per_class_index[c]) {
        auto extra = augment_image(ds, sample, cfg.n_aug, static_cast<std::size_t>(batch * cfg.n_aug), cfg.crop,
                                   candidate_seed(cfg.seed, sample, static_cast<std::size_t>(batch)));
        std::move(extra.begin(), extra.end(), std::back_inserter(cp.candidates));
      }
      score_pool(teacher, pool, cfg.score_batch);
      const int next_round = sel.empty() ? 0 : sel.back().round + 1;
      auto more = select_rounds(cp, ipc - sel.size(), next_round);
      std::move(more.begin(), more.end(), std::back_inserter(sel));
    }
  }
  auto out = assemble_init(selections, cfg.ipc, ds.num_classes, pool.shape);
  if (pool_out) *pool_out = std::move(pool);
  return out;
}

InitImages random_real_init(const Dataset& ds, const InitConfig& cfg) {
  cfg.validate();
  const ImageShape shape{ds.channels, ds.height, ds.width};
  std::vector<std::vector<Selection>> selections;
  for (int c = 0; c < ds.num_classes; ++c) {
    auto idx = ds.per_class_index[static_cast<std::size_t>(c)];
    if (idx.size() < static_cast<std::size_t>(cfg.ipc))
      fail(ErrorCode::kInvalidArgument, "random init: class " + std::to_string(c) + " has only " +
                                            std::to_string(idx.size()) + " images for ipc " + std::to_string(cfg.ipc));
    Rng rng(cfg.seed, 3000 + static_cast<std::uint64_t>(c));
    rng.shuffle(idx);
    std::vector<Selection> sel;
    for (int i = 0; i < cfg.ipc; ++i) {
      const std::size_t sample = idx[static_cast<std::size_t>(i)];
      auto img = random_resized_crop(ds.image_float(sample), shape, cfg.crop, rng);
      sel.push_back({c, sample, 0, 0.0, 0, std::move(img)});
    }
    selections.push_back(std::move(sel));
  }
  return assemble_init(selections, cfg.ipc, ds.num_classes, shape);
}

InitImages random_real_subset(const Dataset& ds, int ipc, std::uint64_t seed) {
  if (ipc < 1) fail(ErrorCode::kInvalidArgument, "random subset: ipc must be >= 1");
  const ImageShape shape{ds.channels, ds.height, ds.width};
  std::vector<std::vector<Selection>> selections;
  for (int c = 0; c < ds.num_classes; ++c) {
    auto idx = ds.per_class_index[static_cast<std::size_t>(c)];
    if (idx.size() < static_cast<std::size_t>(ipc))
      fail(ErrorCode::kInvalidArgument, "random subset: class " + std::to_string(c) + " is too small");
    Rng rng(seed, 4000 + static_cast<std::uint64_t>(c));
    rng.shuffle(idx);
    std::vector<Selection> sel;
    for (int i = 0; i < ipc; ++i)
      sel.push_back({c, idx[static_cast<std::size_t>(i)], 0, 0.0, 0, ds.image_float(idx[static_cast<std::size_t>(i)])});
    selections.push_back(std::move(sel));
  }
  return assemble_init(selections, ipc, ds.num_classes, shape);
}

void write_selection_csv(const std::string& path, std::span<const Selection> selections) {
  std::ostringstream os;
  os << std::setprecision(9) << "class,source_image_id,augmentation_id,score,round\n";
  for (const auto& s : selections)
    os << s.label << ',' << s.source_image_id << ',' << s.augmentation_id << ',' << s.score << ',' << s.round << '\n';
  binio::write_text(path, os.str());
}

void write_pool_dump(const std::string& path, const CandidatePool& pool) {
  std::ostringstream os;
  os << std::setprecision(9) << "class,source_image_id,augmentation_id,score,placeholder\n";
  for (const auto& cp : pool.classes)
    for (const auto& c : cp.candidates)
      os << cp.label << ',' << c.source_image_id << ',' << c.augmentation_id << ',' << c.score << ','
         << (c.placeholder ? 1 : 0) << '\n';
  binio::write_text(path, os.str());
}

}  // namespace ltdd
