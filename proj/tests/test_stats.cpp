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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "core/error.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "stats/moments.hpp"

using namespace ltdd;
using test::random_tensor;

namespace {

ConvNetSpec small_spec(int classes) {
  ConvNetSpec spec;
  spec.depth = 2;
  spec.width = 4;
  spec.height = spec.image_width = 8;
  spec.num_classes = classes;
  return spec;
}

ExpertCheckpoint untrained_observer(const ConvNetSpec& spec, std::uint64_t seed) {
  ExpertCheckpoint ck;
  ck.model = build_model<float>(spec, seed);
  // Non-trivial running statistics so deeper layers see shifted inputs.
  for (auto& b : ck.model.blocks) {
    for (std::size_t k = 0; k < b.running_mean.size(); ++k) {
      b.running_mean[k] = 0.05f * static_cast<float>(k);
      b.running_var[k] = 0.5f + 0.1f * static_cast<float>(k);
    }
  }
  ck.heads = build_heads<float>(static_cast<std::size_t>(spec.feature_dim()), seed + 1);
  return ck;
}

// Raw per-(layer, class, channel) element lists, gathered one sample at a time.
struct RawActivations {
  std::vector<std::vector<std::vector<std::vector<double>>>> v;  // [l][c][k] -> elements
};

RawActivations gather(const ExpertCheckpoint& ck, const Dataset& ds) {
  RawActivations r;
  const std::size_t classes = static_cast<std::size_t>(ds.num_classes);
  for (const auto& b : ck.model.blocks)
    r.v.emplace_back(classes, std::vector<std::vector<double>>(b.running_mean.size()));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::size_t idx[1] = {i};
    const auto fr = forward(ck.model, ds.batch(idx), ForwardMode::kFrozenCapture);
    for (std::size_t l = 0; l < fr.bn.size(); ++l) {
      const auto& a = fr.bn[l].input;
      const std::size_t ch = a.dim(1), inner = a.numel() / ch;
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t j = 0; j < inner; ++j)
          r.v[l][static_cast<std::size_t>(ds.labels[i])][k].push_back(a.data()[k * inner + j]);
    }
  }
  return r;
}

double mean_of(const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0) / x.size(); }
double pop_var(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / x.size();
}

bool close_rel(double a, double b, double rel) { return std::abs(a - b) <= rel * std::max(1.0, std::abs(b)); }

Tensor<float> act(std::size_t n, std::size_t ch, std::uint64_t seed) {
  return random_tensor<float>({n, ch, 2, 2}, seed, -2.0, 3.0);
}

}  // namespace

TEST_SUITE("stats") {
  TEST_CASE("first batch sets the mean and equal batches average") {
    ClassMomentsTable t({2}, 1);
    const auto a = Tensor<float>::from({1, 2, 1, 2}, {1.0f, 3.0f, -1.0f, 1.0f});
    const int lab[1] = {0};
    update_class_moments(t, std::span<const Tensor<float>>(&a, 1), lab);
    CHECK(t.at(0, 0, 0).mean == doctest::Approx(2.0));
    CHECK(t.at(0, 1, 0).mean == doctest::Approx(0.0));
    CHECK(t.at(0, 0, 0).count == 2);

    const auto b = Tensor<float>::from({1, 2, 1, 2}, {5.0f, 7.0f, 0.0f, 0.0f});
    update_class_moments(t, std::span<const Tensor<float>>(&b, 1), lab);
    CHECK(t.at(0, 0, 0).mean == doctest::Approx(4.0));
    CHECK(t.at(0, 0, 0).m2 / t.at(0, 0, 0).count == doctest::Approx(pop_var({1, 3, 5, 7})));
  }

  TEST_CASE("any partition into batches gives the whole-set moments") {
    const std::size_t n = 40, ch = 3;
    const auto all = act(n, ch, 3);
    std::vector<int> labels(n);
    Rng lr(4);
    for (auto& y : labels) y = static_cast<int>(lr.index(3));

    // Brute-force oracle.
    std::vector<std::vector<double>> elems(3 * ch);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < ch; ++k)
        for (std::size_t j = 0; j < 4; ++j)
          elems[labels[i] * ch + k].push_back(all.data()[(i * ch + k) * 4 + j]);

    for (std::uint64_t shuffle = 0; shuffle < 6; ++shuffle) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      Rng rng(100 + shuffle);
      rng.shuffle(order);
      ClassMomentsTable t({ch}, 3);
      std::size_t start = 0;
      while (start < n) {
        const std::size_t len = std::min(n - start, 1 + rng.index(9));
        std::vector<float> buf;
        std::vector<int> lab;
        for (std::size_t i = start; i < start + len; ++i) {
          const auto row = all.data().subspan(order[i] * ch * 4, ch * 4);
          buf.insert(buf.end(), row.begin(), row.end());
          lab.push_back(labels[order[i]]);
        }
        const auto batch = Tensor<float>::from({len, ch, 2, 2}, std::move(buf));
        update_class_moments(t, std::span<const Tensor<float>>(&batch, 1), lab);
        start += len;
      }
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t k = 0; k < ch; ++k) {
          const auto& cell = t.at(0, k, c);
          CHECK(close_rel(cell.mean, mean_of(elems[c * ch + k]), 1e-5));
          CHECK(close_rel(cell.m2 / cell.count, pop_var(elems[c * ch + k]), 1e-5));
          CHECK(cell.count == static_cast<std::int64_t>(elems[c * ch + k].size()));
        }
    }
  }

  TEST_CASE("label out of range") {
    ClassMomentsTable t({2}, 2);
    const auto a = act(1, 2, 5);
    const int lab[1] = {2};
    CHECK_THROWS_AS(update_class_moments(t, std::span<const Tensor<float>>(&a, 1), lab), Error);
  }

  TEST_CASE("merge identity, commutativity and association") {
    auto table_from = [](std::uint64_t seed) {
      ClassMomentsTable t({3}, 2);
      const auto a = act(5, 3, seed);
      const int lab[5] = {0, 1, 1, 0, 1};
      update_class_moments(t, std::span<const Tensor<float>>(&a, 1), lab);
      return t;
    };
    const auto a = table_from(1), b = table_from(2), c = table_from(3);
    const ClassMomentsTable empty({3}, 2);
    const auto id = merge_moments(a, empty);
    const auto ab = merge_moments(a, b), ba = merge_moments(b, a);
    const auto left = merge_moments(merge_moments(a, b), c), right = merge_moments(a, merge_moments(b, c));

    // Sequential oracle: the three batches fed in order.
    ClassMomentsTable seq({3}, 2);
    for (std::uint64_t s = 1; s <= 3; ++s) {
      const auto x = act(5, 3, s);
      const int lab[5] = {0, 1, 1, 0, 1};
      update_class_moments(seq, std::span<const Tensor<float>>(&x, 1), lab);
    }
    for (std::size_t cl = 0; cl < 2; ++cl)
      for (std::size_t k = 0; k < 3; ++k) {
        CHECK(id.at(0, k, cl).mean == a.at(0, k, cl).mean);
        CHECK(id.at(0, k, cl).m2 == a.at(0, k, cl).m2);
        CHECK(std::abs(ab.at(0, k, cl).mean - ba.at(0, k, cl).mean) <= 1e-6);
        CHECK(std::abs(ab.at(0, k, cl).m2 - ba.at(0, k, cl).m2) <= 1e-6);
        for (const auto* m : {&left, &right}) {
          CHECK(close_rel(m->at(0, k, cl).mean, seq.at(0, k, cl).mean, 1e-5));
          CHECK(close_rel(m->at(0, k, cl).m2, seq.at(0, k, cl).m2, 1e-5));
        }
      }
    CHECK_THROWS_AS(merge_moments(a, ClassMomentsTable({2}, 2)), Error);
  }

  TEST_CASE("finalize averages classes uniformly") {
    ClassMomentsTable t({1}, 2);
    t.at(0, 0, 0) = {2, 0.0, 2.0};
    t.at(0, 0, 1) = {1000, 2.0, 4000.0};
    const auto b = finalize_global(t);
    CHECK(b.global_mean[0][0] == doctest::Approx(1.0));
    CHECK(b.global_var[0][0] == doctest::Approx((1.0 + 4.0) / 2));
    CHECK(b.class_var[0][1] == doctest::Approx(4.0));

    FinalizeOptions total;
    total.total_variance = true;
    CHECK(finalize_global(t, total).global_var[0][0] == doctest::Approx(2.5 + 1.0));

    ClassMomentsTable one({1}, 1);
    one.at(0, 0, 0) = {4, 3.0, 8.0};
    const auto single = finalize_global(one);
    CHECK(single.global_mean[0][0] == single.class_mean[0][0]);
    CHECK(single.global_var[0][0] == single.class_var[0][0]);

    t.at(0, 0, 1) = {1, 2.0, 0.0};
    CHECK_THROWS_AS(finalize_global(t), Error);
  }

  TEST_CASE("recalibrated bundle matches a direct computation") {
    const auto spec = small_spec(3);
    const auto obs = untrained_observer(spec, 7);
    const Dataset ds = make_long_tail(gen_blobs(3, 12, 3, 8, 8, 2), LongTailSpec{3, 12, 4.0, 0});
    const auto before = obs.serialize();
    const auto bundle = recalibrate(obs, ds, 5);
    CHECK(obs.serialize() == before);
    CHECK(bundle.checkpoint_hash == obs.hash());
    CHECK(bundle.dataset_hash == dataset_hash(ds));
    CHECK(bundle.source == "recalibrated");

    const auto raw = gather(obs, ds);
    for (std::size_t l = 0; l < raw.v.size(); ++l) {
      const std::size_t ch = bundle.channels[l];
      for (std::size_t k = 0; k < ch; ++k) {
        double gm = 0.0, gv = 0.0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double m = mean_of(raw.v[l][c][k]), v = pop_var(raw.v[l][c][k]);
          CHECK(close_rel(bundle.class_mean[l][c * ch + k], m, 1e-5));
          CHECK(close_rel(bundle.class_var[l][c * ch + k], v, 1e-5));
          gm += m / 3;
          gv += v / 3;
        }
        CHECK(close_rel(bundle.global_mean[l][k], gm, 1e-5));
        CHECK(close_rel(bundle.global_var[l][k], gv, 1e-5));
      }
    }
  }

  TEST_CASE("batch size does not change the bundle") {
    const auto spec = small_spec(2);
    const auto obs = untrained_observer(spec, 8);
    const Dataset ds = gen_blobs(2, 9, 3, 8, 8, 3);
    const auto whole = recalibrate(obs, ds, ds.size()), single = recalibrate(obs, ds, 1);
    for (std::size_t l = 0; l < whole.layers(); ++l) {
      for (std::size_t i = 0; i < whole.class_mean[l].size(); ++i) {
        CHECK(close_rel(whole.class_mean[l][i], single.class_mean[l][i], 1e-5));
        CHECK(close_rel(whole.class_var[l][i], single.class_var[l][i], 1e-5));
      }
    }
    CHECK_THROWS_AS(recalibrate(obs, ds, 0), Error);
    CHECK_THROWS_AS(recalibrate(obs, gen_blobs(3, 4, 3, 8, 8, 3), 4), Error);
  }

  TEST_CASE("duplicating a class leaves the global stats unchanged") {
    const auto spec = small_spec(2);
    const auto obs = untrained_observer(spec, 9);
    const Dataset ds = gen_blobs(2, 6, 3, 8, 8, 4);
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i : ds.per_class_index[1]) idx.push_back(i);
    const Dataset dup = subset(ds, idx);
    const auto a = recalibrate(obs, ds, 4), b = recalibrate(obs, dup, 4);
    for (std::size_t l = 0; l < a.layers(); ++l)
      for (std::size_t k = 0; k < a.channels[l]; ++k) {
        CHECK(close_rel(a.global_mean[l][k], b.global_mean[l][k], 1e-5));
        CHECK(close_rel(a.global_var[l][k], b.global_var[l][k], 1e-5));
      }
  }

  TEST_CASE("repeated single sample per class") {
    const auto spec = small_spec(2);
    const auto obs = untrained_observer(spec, 10);
    const Dataset base = gen_blobs(2, 1, 3, 8, 8, 5);
    const std::vector<std::size_t> idx{0, 0, 0, 1, 1, 1};
    const auto bundle = recalibrate(obs, subset(base, idx), 4);
    const auto raw = gather(obs, base);
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t k = 0; k < bundle.channels[0]; ++k)
        CHECK(close_rel(bundle.class_mean[0][c * bundle.channels[0] + k], mean_of(raw.v[0][c][k]), 1e-5));
  }

  TEST_CASE("fixed-momentum moving average is biased on skewed data") {
    const auto spec = small_spec(3);
    const auto obs = untrained_observer(spec, 11);
    const Dataset ds = make_long_tail(gen_blobs(3, 30, 3, 8, 8, 6), LongTailSpec{3, 30, 10.0, 0});
    std::vector<std::size_t> order;
    for (const auto& idx : ds.per_class_index) order.insert(order.end(), idx.begin(), idx.end());
    const auto fair = recalibrate(obs, ds, 8);
    const auto ema = ema_reference(obs.model, ds, order, 8, 0.1);
    double worst = 0.0;
    for (std::size_t l = 0; l < fair.layers(); ++l)
      for (std::size_t k = 0; k < fair.channels[l]; ++k)
        worst = std::max(worst, std::abs(ema.global_mean[l][k] - fair.global_mean[l][k]) /
                                    std::max(1.0, std::abs(static_cast<double>(fair.global_mean[l][k]))));
    CHECK(worst > 1e-2);
  }

  TEST_CASE("bundle file round trip and running-stat bundle") {
    const auto spec = small_spec(2);
    const auto obs = untrained_observer(spec, 12);
    const Dataset ds = gen_blobs(2, 4, 3, 8, 8, 7);
    const auto dir = test::temp_dir("stats_io");
    const auto bundle = recalibrate(obs, ds, 3);
    save_stats(dir + "/b.bin", bundle);
    CHECK(load_stats(dir + "/b.bin") == bundle);

    const auto run = running_stats_bundle(obs, ds);
    CHECK_FALSE(run.has_class_stats);
    CHECK(run.source == "running");
    CHECK(run.global_mean[1] == obs.model.blocks[1].running_mean);
    save_stats(dir + "/r.bin", run);
    CHECK(load_stats(dir + "/r.bin") == run);

    auto bytes = bundle.serialize();
    bytes.resize(bytes.size() / 2);
    CHECK_THROWS_AS(RealStatsBundle::deserialize(bytes), Error);
  }
}
