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

#include <cmath>
#include <numeric>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/ops.hpp"
#include "data/dataset.hpp"
#include "doctest.h"
#include "expert/expert.hpp"
#include "expert/losses.hpp"
#include "helpers.hpp"

using namespace ltdd;
using test::random_tensor;

namespace {

// Independent plain cross-entropy on soft targets.
double cross_entropy(std::span<const double> p, std::span<const double> y, std::size_t c) {
  double total = 0.0;
  const std::size_t n = p.size() / c;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < c; ++k) total -= y[i * c + k] * std::log(std::max(p[i * c + k], 1e-12));
  return total / static_cast<double>(n);
}

Tensor<double> random_probs(std::size_t n, std::size_t c, std::uint64_t seed) {
  return ops::softmax_rows(random_tensor<double>({n, c}, seed, -2.0, 2.0));
}

std::vector<double> random_targets(std::size_t n, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> y(n * c, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double lam = rng.uniform();
    y[i * c + rng.index(c)] += lam;
    y[i * c + rng.index(c)] += 1.0 - lam;
  }
  return y;
}

}  // namespace

TEST_SUITE("expert") {
  TEST_CASE("mix_views blends images and one-hot targets") {
    const std::vector<float> a{0.2f, 0.4f, 0.6f}, b{1.0f, 0.0f, 0.5f};
    const auto same = mix_views(a, b, 1, 0, 3, 1.0);
    CHECK(same.image == a);
    CHECK(same.target == std::vector<float>{0.0f, 1.0f, 0.0f});

    const auto half = mix_views(a, b, 0, 1, 2, 0.5);
    CHECK(half.target == std::vector<float>{0.5f, 0.5f});

    const auto m = mix_views(a, b, 0, 2, 3, 0.3);
    const double mean_a = 0.4, mean_b = 0.5;
    CHECK(std::accumulate(m.image.begin(), m.image.end(), 0.0) / 3.0 ==
          doctest::Approx(0.3 * mean_a + 0.7 * mean_b).epsilon(1e-6));
    CHECK(std::accumulate(m.target.begin(), m.target.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));

    CHECK_THROWS_AS(mix_views(a, std::vector<float>{1.0f}, 0, 1, 2, 0.5), Error);
    CHECK_THROWS_AS(mix_views(a, b, 0, 1, 2, 1.5), Error);
  }

  TEST_CASE("robust loss values") {
    const auto z1 = random_tensor<double>({4, 6}, 1), z2 = random_tensor<double>({4, 6}, 2);
    CHECK(robust_loss(z1, z2, z2, z1).item() == doctest::Approx(-2.0).epsilon(1e-12));

    const auto e0 = Tensor<double>::from({1, 2}, {1.0, 0.0}), e1 = Tensor<double>::from({1, 2}, {0.0, 3.0});
    CHECK(robust_loss(e0, e0, e1, e1).item() == doctest::Approx(0.0));

    const auto p1 = random_tensor<double>({4, 6}, 3), p2 = random_tensor<double>({4, 6}, 4);
    const double base = robust_loss(z1, z2, p1, p2).item();
    CHECK(robust_loss(ops::scale(z1, 3.5), z2, p1, ops::scale(p2, 0.2)).item() == doctest::Approx(base).epsilon(1e-12));

    CHECK_THROWS_AS(robust_loss(Tensor<double>::zeros({1, 2}), e0, e0, e0), Error);
  }

  TEST_CASE("robust loss does not send gradient into the predictions") {
    auto z1 = random_tensor<double>({3, 5}, 5), z2 = random_tensor<double>({3, 5}, 6);
    auto p1 = random_tensor<double>({3, 5}, 7), p2 = random_tensor<double>({3, 5}, 8);
    for (auto* t : {&z1, &z2, &p1, &p2}) t->set_requires_grad(true);
    robust_loss(z1, z2, p1, p2).backward();
    CHECK(z1.has_grad());
    for (const auto* p : {&p1, &p2}) {
      if (!p->has_grad()) continue;
      for (double g : p->grad()) CHECK(g == 0.0);
    }
  }

  TEST_CASE("debias schedule") {
    CHECK(debias_alpha(0, 10) == 0.0);
    CHECK(debias_alpha(10, 10) == 1.0);
    CHECK(debias_alpha(5, 10) == doctest::Approx(0.25));
    double prev = -1.0;
    for (int t = 0; t <= 20; ++t) {
      CHECK(debias_alpha(t, 20) >= prev);
      prev = debias_alpha(t, 20);
    }
    CHECK_THROWS_AS(debias_alpha(11, 10), Error);
    CHECK_THROWS_AS(debias_alpha(-1, 10), Error);
  }

  TEST_CASE("debias loss reduces to cross-entropy at t = 0") {
    const auto p = random_probs(6, 4, 10);
    const auto y = random_targets(6, 4, 11);
    const ClassFrequency freq{{0.5, 0.3, 0.15, 0.05}, 0.5};
    CHECK(debias_loss<double>(p, y, freq, 0, 50).item() ==
          doctest::Approx(cross_entropy(p.data(), y, 4)).epsilon(1e-9));
  }

  TEST_CASE("uniform frequencies give the closed form") {
    const auto p = random_probs(5, 4, 12);
    const auto y = random_targets(5, 4, 13);
    const double ce = cross_entropy(p.data(), y, 4);
    for (double q : {0.0, 0.5, 2.0}) {
      const ClassFrequency freq{{0.25, 0.25, 0.25, 0.25}, q};
      const double a = debias_alpha(7, 10);
      CHECK(debias_loss<double>(p, y, freq, 7, 10).item() ==
            doctest::Approx(a * ce / 4 + (1 - a) * ce).epsilon(1e-9));
    }
  }

  TEST_CASE("rescaling the frequencies does not change the loss") {
    const auto p = random_probs(5, 3, 14);
    const auto y = random_targets(5, 3, 15);
    const ClassFrequency freq{{0.6, 0.3, 0.1}, 0.7};
    const double base = debias_loss<double>(p, y, freq, 3, 4).item();
    for (double s : {1e-3, 0.5, 7.0, 1e4}) {
      ClassFrequency scaled = freq;
      for (auto& r : scaled.r) r *= s;
      CHECK(std::abs(debias_loss<double>(p, y, scaled, 3, 4).item() - base) <= 1e-6);
    }
  }

  TEST_CASE("debias loss errors and clamping") {
    const auto p = Tensor<double>::from({1, 2}, {1.0, 0.0});
    const std::vector<double> y{0.0, 1.0};
    const ClassFrequency freq{{0.5, 0.5}, 0.5};
    CHECK(debias_loss<double>(p, y, freq, 0, 1).item() == doctest::Approx(-std::log(1e-12)));
    CHECK_THROWS_AS(debias_loss<double>(p, y, freq, 2, 1), Error);
    CHECK_THROWS_AS(debias_loss<double>(p, y, ClassFrequency{{0.5, 0.0}, 0.5}, 0, 1), Error);
  }

  TEST_CASE("rarer classes get larger weights when q > 0") {
    const ClassFrequency freq{{0.7, 0.2, 0.1}, 0.5};
    const auto w = freq.normalized_weights();
    CHECK(w[2] > w[0]);
    CHECK(std::accumulate(w.begin(), w.end(), 0.0) == doctest::Approx(1.0));
    const auto flat = ClassFrequency{{0.7, 0.2, 0.1}, 0.0}.normalized_weights();
    CHECK(flat[0] == doctest::Approx(flat[2]));
  }

  TEST_CASE("class frequency comes from class counts") {
    const Dataset ds = make_long_tail(gen_blobs(3, 20, 3, 8, 8, 0), LongTailSpec{3, 20, 4.0, 0});
    const auto freq = class_frequency(ds, 0.5);
    const auto counts = ds.class_counts();
    for (std::size_t c = 0; c < 3; ++c)
      CHECK(freq.r[c] == doctest::Approx(static_cast<double>(counts[c]) / static_cast<double>(ds.size())));
  }

  TEST_CASE("combined loss is the weighted sum of its parts") {
    ConvNetSpec spec;
    spec.depth = 2;
    spec.width = 4;
    spec.height = spec.image_width = 8;
    spec.num_classes = 3;
    auto model = build_model<double>(spec, 1);
    const auto heads = build_heads<double>(static_cast<std::size_t>(spec.feature_dim()), 2);
    const auto v1 = random_tensor<double>(spec.input_shape(4), 3, 0.0, 1.0);
    const auto v2 = random_tensor<double>(spec.input_shape(4), 4, 0.0, 1.0);
    const auto y1 = random_targets(4, 3, 5), y2 = random_targets(4, 3, 6);
    const ClassFrequency freq{{0.6, 0.3, 0.1}, 0.5};
    const auto l = expert_loss<double>(model, heads, v1, v2, y1, y2, freq, 2, 10, 0.5, 1.0);
    CHECK(l.total.item() == doctest::Approx(0.5 * l.robust.item() + l.debias.item()).epsilon(1e-12));
    const auto plain = expert_loss<double>(model, heads, v1, v2, y1, y2, freq, 2, 10, 0.0, 1.0);
    CHECK(plain.robust.item() == 0.0);
    CHECK(plain.total.item() == doctest::Approx(plain.debias.item()));
  }

  TEST_CASE("training with the plain recipe fits two blob classes") {
    const Dataset ds = gen_blobs(2, 40, 3, 16, 16, 5);
    ConvNetSpec spec;
    spec.depth = 2;
    spec.num_classes = 2;
    ExpertTrainConfig cfg;
    cfg.iterations = 120;
    cfg.batch_size = 32;
    cfg.gamma_robust = 0.0;
    cfg.q = 0.0;
    cfg.mixup = false;
    std::vector<TrainLogRow> log;
    train_expert(ds, spec, cfg, &log);
    REQUIRE(log.size() == 120);
    double tail = 0.0;
    for (std::size_t i = log.size() - 10; i < log.size(); ++i) tail += log[i].total / 10.0;
    CHECK(tail < 0.1);
    CHECK(log.back().alpha == doctest::Approx(debias_alpha(119, 120)));
  }

  TEST_CASE("training is deterministic and T = 1 performs one step") {
    const Dataset ds = make_long_tail(gen_blobs(3, 20, 3, 8, 8, 6), LongTailSpec{3, 20, 4.0, 0});
    ConvNetSpec spec;
    spec.depth = 2;
    spec.width = 4;
    spec.height = spec.image_width = 8;
    spec.num_classes = 3;
    ExpertTrainConfig cfg;
    cfg.iterations = 5;
    cfg.batch_size = 8;
    const auto a = train_expert(ds, spec, cfg);
    CHECK(a.serialize() == train_expert(ds, spec, cfg).serialize());

    cfg.iterations = 1;
    std::vector<TrainLogRow> log;
    const auto one = train_expert(ds, spec, cfg, &log);
    CHECK(log.size() == 1);
    CHECK(serialize_model(one.model) != serialize_model(build_model<float>(spec, cfg.seed)));

    cfg.iterations = 0;
    CHECK_THROWS_AS(train_expert(ds, spec, cfg), Error);
  }

  TEST_CASE("checkpoint and training log files") {
    const auto dir = test::temp_dir("expert_io");
    const Dataset ds = gen_blobs(2, 10, 3, 8, 8, 7);
    ConvNetSpec spec;
    spec.depth = 1;
    spec.width = 4;
    spec.height = spec.image_width = 8;
    spec.num_classes = 2;
    ExpertTrainConfig cfg;
    cfg.iterations = 3;
    cfg.batch_size = 4;
    cfg.seed = 17;
    std::vector<TrainLogRow> log;
    const auto ck = train_expert(ds, spec, cfg, &log);
    save_expert(dir + "/e.ckpt", ck);
    const auto back = load_expert(dir + "/e.ckpt");
    CHECK(back.serialize() == ck.serialize());
    CHECK(back.config.to_text() == cfg.to_text());
    CHECK(back.hash() == ck.hash());

    write_train_log(dir + "/log.csv", log);
    const auto text = binio::read_text(dir + "/log.csv");
    CHECK(text.rfind("iteration,robust,debias,total,alpha\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  }
}
