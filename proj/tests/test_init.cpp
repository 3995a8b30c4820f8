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
#include <map>
#include <set>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "doctest.h"
#include "helpers.hpp"
#include "init/selector.hpp"

using namespace ltdd;

namespace {

ClassPool manual_pool(const std::vector<std::vector<double>>& scores) {
  ClassPool p;
  for (std::size_t s = 0; s < scores.size(); ++s)
    for (std::size_t a = 0; a < scores[s].size(); ++a) {
      Candidate c;
      c.source_image_id = s;
      c.augmentation_id = a;
      c.image = {static_cast<float>(s), static_cast<float>(a)};
      c.score = scores[s][a];
      p.candidates.push_back(c);
    }
  return p;
}

// Straightforward restatement of the round procedure on (source, aug, score) triples.
std::vector<std::pair<std::size_t, std::size_t>> oracle(const std::vector<std::vector<double>>& scores,
                                                        std::size_t slots) {
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  auto better = [&](std::size_t s1, std::size_t a1, std::size_t s2, std::size_t a2) {
    if (scores[s1][a1] != scores[s2][a2]) return scores[s1][a1] > scores[s2][a2];
    if (s1 != s2) return s1 < s2;
    return a1 < a2;
  };
  while (out.size() < slots) {
    std::vector<std::pair<std::size_t, std::size_t>> offers;
    for (std::size_t s = 0; s < scores.size(); ++s) {
      bool have = false;
      std::size_t best = 0;
      for (std::size_t a = 0; a < scores[s].size(); ++a) {
        if (used.count({s, a})) continue;
        if (!have || better(s, a, s, best)) best = a;
        have = true;
      }
      if (have) offers.push_back({s, best});
    }
    if (offers.empty()) break;
    std::sort(offers.begin(), offers.end(),
              [&](auto x, auto y) { return better(x.first, x.second, y.first, y.second); });
    const std::size_t take = std::min(offers.size(), slots - out.size());
    for (std::size_t i = 0; i < take; ++i) {
      used.insert(offers[i]);
      out.push_back(offers[i]);
    }
  }
  return out;
}

ConvNetSpec tiny_spec(int classes) {
  ConvNetSpec spec;
  spec.depth = 1;
  spec.width = 4;
  spec.height = spec.image_width = 8;
  spec.num_classes = classes;
  return spec;
}

ExpertCheckpoint teacher_for(const ConvNetSpec& spec, std::uint64_t seed) {
  ExpertCheckpoint ck;
  ck.model = build_model<float>(spec, seed);
  ck.heads = build_heads<float>(static_cast<std::size_t>(spec.feature_dim()), seed);
  return ck;
}

}  // namespace

TEST_SUITE("init") {
  TEST_CASE("candidate generation") {
    const ImageShape shape{3, 8, 8};
    const auto img = test::random_tensor<float>({3, 8, 8}, 1, 0.0, 1.0);
    const std::vector<float> x(img.data().begin(), img.data().end());
    const auto same = gen_candidates(x, shape, 1, ResizedCropConfig::identity(), 5);
    REQUIRE(same.size() == 1);
    CHECK(same[0] == x);

    const auto a = gen_candidates(x, shape, 8, ResizedCropConfig{}, 9);
    CHECK(a == gen_candidates(x, shape, 8, ResizedCropConfig{}, 9));
    REQUIRE(a.size() == 8);
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = i + 1; j < 8; ++j) CHECK(a[i] != a[j]);
    CHECK_THROWS_AS(gen_candidates(x, shape, 0, ResizedCropConfig{}, 9), Error);
    CHECK_THROWS_AS(gen_candidates(x, shape, 2, ResizedCropConfig{0.5, 0.4, 1.0, 1.0, 0.0}, 9), Error);
  }

  TEST_CASE("pool layout and placeholders") {
    const Dataset ds = make_long_tail(gen_blobs(3, 6, 3, 8, 8, 1), LongTailSpec{3, 6, 6.0, 0});
    const auto counts = ds.class_counts();
    const auto pool = build_pool(ds, 2, ResizedCropConfig{}, 3);
    REQUIRE(pool.classes.size() == 3);
    std::size_t placeholders = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(pool.classes[c].candidates.size() == 6 * 2);
      std::set<std::pair<std::size_t, std::size_t>> ids;
      std::size_t real = 0;
      for (const auto& cand : pool.classes[c].candidates) {
        CHECK(ids.insert({cand.source_image_id, cand.augmentation_id}).second);
        if (cand.placeholder) {
          ++placeholders;
          CHECK(cand.used);
          CHECK(std::isinf(cand.score));
          CHECK(std::all_of(cand.image.begin(), cand.image.end(), [](float v) { return v == 0.0f; }));
        } else {
          ++real;
          CHECK(ds.labels[cand.source_image_id] == static_cast<int>(c));
        }
      }
      CHECK(real == counts[c] * 2);
    }
    CHECK(placeholders == pool.placeholder_count);
    CHECK(build_pool(ds, 2, ResizedCropConfig{}, 3, false).placeholder_count == 0);
  }

  TEST_CASE("scores follow the teacher") {
    const auto spec = tiny_spec(4);
    auto teacher = teacher_for(spec, 2);
    const Dataset ds = gen_blobs(4, 2, 3, 8, 8, 4);

    // Zero classifier: uniform prediction.
    teacher.model.fc_weight = Tensor<float>::zeros(teacher.model.fc_weight.shape());
    teacher.model.fc_bias = Tensor<float>::zeros({4});
    auto pool = build_pool(ds, 2, ResizedCropConfig{}, 1);
    score_pool(teacher, pool, 3);
    for (const auto& cp : pool.classes)
      for (const auto& c : cp.candidates) CHECK(c.score == doctest::Approx(-std::log(4.0)).epsilon(1e-6));

    // Confident and correct only on class 2.
    teacher.model.fc_bias = Tensor<float>::from({4}, {0.0f, 0.0f, 100.0f, 0.0f});
    auto pool2 = build_pool(ds, 2, ResizedCropConfig{}, 1);
    score_pool(teacher, pool2, 5);
    for (const auto& c : pool2.classes[2].candidates) CHECK(std::abs(c.score) < 1e-6);
    for (const auto& c : pool2.classes[0].candidates) CHECK(c.score < -50.0);
  }

  TEST_CASE("batched scoring equals one-by-one scoring and leaves the teacher alone") {
    const auto spec = tiny_spec(3);
    const auto teacher = teacher_for(spec, 3);
    const auto before = teacher.serialize();
    const Dataset ds = make_long_tail(gen_blobs(3, 5, 3, 8, 8, 6), LongTailSpec{3, 5, 5.0, 0});
    auto a = build_pool(ds, 3, ResizedCropConfig{}, 8), b = a;
    score_pool(teacher, a, 1000);
    score_pool(teacher, b, 1);
    for (std::size_t c = 0; c < a.classes.size(); ++c)
      for (std::size_t i = 0; i < a.classes[c].candidates.size(); ++i) {
        const auto& x = a.classes[c].candidates[i];
        const auto& y = b.classes[c].candidates[i];
        if (x.placeholder) {
          CHECK(std::isinf(x.score));
          continue;
        }
        CHECK(std::isfinite(x.score));
        CHECK(std::abs(x.score - y.score) <= 1e-5);
      }
    CHECK(teacher.serialize() == before);
  }

  TEST_CASE("selection examples") {
    auto one = manual_pool({{-0.5, -0.1, -0.9}});
    const auto s1 = select_rounds(one, 1);
    REQUIRE(s1.size() == 1);
    CHECK(s1[0].augmentation_id == 1);

    auto three = manual_pool({{-0.2, -0.3}, {-0.1, -0.6}, {-0.4, -0.35}});
    const auto s4 = select_rounds(three, 4);
    REQUIRE(s4.size() == 4);
    CHECK(s4[0].round == 0);
    CHECK(s4[3].round == 1);
    std::set<std::size_t> first;
    for (int i = 0; i < 3; ++i) first.insert(s4[i].source_image_id);
    CHECK(first.size() == 3);
    CHECK(s4[3].source_image_id == 0);
    CHECK(s4[3].augmentation_id == 1);

    auto single = manual_pool({{-0.3, -0.1, -0.5, -0.2, -0.4}});
    const auto s3 = select_rounds(single, 3);
    REQUIRE(s3.size() == 3);
    CHECK(s3[0].augmentation_id == 1);
    CHECK(s3[1].augmentation_id == 3);
    CHECK(s3[2].augmentation_id == 0);
    for (int i = 0; i < 3; ++i) CHECK(s3[i].round == i);
  }

  TEST_CASE("ties go to the lower source, then the lower augmentation") {
    auto p = manual_pool({{-1.0, -1.0}, {-1.0, -1.0}});
    const auto s = select_rounds(p, 3);
    REQUIRE(s.size() == 3);
    CHECK(s[0].source_image_id == 0);
    CHECK(s[0].augmentation_id == 0);
    CHECK(s[1].source_image_id == 1);
    CHECK(s[2].source_image_id == 0);
    CHECK(s[2].augmentation_id == 1);
  }

  TEST_CASE("selection equals the brute-force procedure on random pools") {
    Rng rng(77);
    for (int trial = 0; trial < 400; ++trial) {
      const std::size_t sources = 1 + rng.index(6), augs = 1 + rng.index(3);
      std::vector<std::vector<double>> scores(sources, std::vector<double>(augs));
      // Coarse values so ties happen.
      for (auto& row : scores)
        for (auto& v : row) v = -static_cast<double>(rng.index(5));
      const std::size_t slots = 1 + rng.index(sources * augs + 2);
      auto pool = manual_pool(scores);
      const auto got = select_rounds(pool, slots);
      const auto want = oracle(scores, slots);
      REQUIRE(got.size() == want.size());
      std::map<std::size_t, double> last_score;
      std::set<std::pair<std::size_t, std::size_t>> seen;
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].source_image_id == want[i].first);
        CHECK(got[i].augmentation_id == want[i].second);
        CHECK(seen.insert(want[i]).second);
        auto it = last_score.find(got[i].source_image_id);
        if (it != last_score.end()) CHECK(got[i].score <= it->second);
        last_score[got[i].source_image_id] = got[i].score;
      }
      std::map<int, std::set<std::size_t>> per_round;
      for (const auto& s : got) CHECK(per_round[s.round].insert(s.source_image_id).second);
    }
  }

  TEST_CASE("placeholders are never selected") {
    auto p = manual_pool({{-0.1}});
    Candidate ph;
    ph.placeholder = true;
    ph.used = true;
    ph.source_image_id = 1;
    ph.image = {0.0f, 0.0f};
    p.candidates.push_back(ph);
    const auto s = select_rounds(p, 5);
    REQUIRE(s.size() == 1);
    CHECK(s[0].source_image_id == 0);
  }

  TEST_CASE("confidence-guided init fills every class") {
    const auto spec = tiny_spec(3);
    const auto teacher = teacher_for(spec, 5);
    const Dataset ds = make_long_tail(gen_blobs(3, 8, 3, 8, 8, 9), LongTailSpec{3, 8, 8.0, 0});
    REQUIRE(ds.class_counts()[2] == 1);
    InitConfig cfg;
    cfg.ipc = 4;
    cfg.n_aug = 2;
    CandidatePool pool;
    const auto init = confidence_guided_init(teacher, ds, cfg, &pool);
    CHECK(init.images.shape() == Shape{12, 3, 8, 8});
    for (int c = 0; c < 3; ++c) CHECK(std::count(init.labels.begin(), init.labels.end(), c) == 4);
    for (std::size_t i = 0; i < 12; ++i) {
      const auto row = init.images.data().subspan(i * 192, 192);
      CHECK(std::any_of(row.begin(), row.end(), [](float v) { return v != 0.0f; }));
    }
    std::set<std::pair<std::size_t, std::size_t>> ids;
    for (const auto& s : init.selections) {
      CHECK(ds.labels[s.source_image_id] == s.label);
      CHECK(ids.insert({s.source_image_id, s.augmentation_id}).second);
    }

    cfg.regen_batches = 0;
    CHECK_THROWS_AS(confidence_guided_init(teacher, ds, cfg), Error);
    cfg.regen_batches = 3;
    cfg.ipc = 0;
    CHECK_THROWS_AS(confidence_guided_init(teacher, ds, cfg), Error);
  }

  TEST_CASE("assemble rejects shortfalls") {
    std::vector<std::vector<Selection>> sel(2);
    Selection s;
    s.image.assign(4, 0.5f);
    sel[0] = {s, s};
    s.label = 1;
    sel[1] = {s};
    CHECK_THROWS_AS(assemble_init(sel, 2, 2, ImageShape{1, 2, 2}), Error);
    sel[1].push_back(s);
    const auto ok = assemble_init(sel, 2, 2, ImageShape{1, 2, 2});
    CHECK(ok.labels == std::vector<int>{0, 0, 1, 1});
  }

  TEST_CASE("random real baselines") {
    const Dataset ds = make_long_tail(gen_blobs(3, 10, 3, 8, 8, 2), LongTailSpec{3, 10, 2.0, 0});
    const auto sub = random_real_subset(ds, 3, 4);
    REQUIRE(sub.labels.size() == 9);
    REQUIRE(sub.selections.size() == 9);
    const std::size_t numel = ds.image_numel();
    std::set<std::size_t> sources;
    for (std::size_t i = 0; i < 9; ++i) {
      const auto& s = sub.selections[i];
      CHECK(s.label == static_cast<int>(i / 3));
      CHECK(ds.labels[s.source_image_id] == s.label);
      CHECK(sources.insert(s.source_image_id).second);
      const auto img = ds.image_float(s.source_image_id);
      const auto row = sub.images.data().subspan(i * numel, numel);
      CHECK(std::equal(row.begin(), row.end(), img.begin()));
    }
    InitConfig cfg;
    cfg.ipc = 3;
    CHECK(random_real_init(ds, cfg).labels.size() == 9);
    cfg.ipc = 20;
    CHECK_THROWS_AS(random_real_init(ds, cfg), Error);
    CHECK_THROWS_AS(random_real_subset(ds, 20, 0), Error);
  }

  TEST_CASE("selection csv") {
    const auto dir = test::temp_dir("init_io");
    Selection s;
    s.label = 2;
    s.source_image_id = 7;
    s.augmentation_id = 3;
    s.score = -0.25;
    s.round = 1;
    const std::vector<Selection> v{s};
    write_selection_csv(dir + "/sel.csv", v);
    const auto text = binio::read_text(dir + "/sel.csv");
    CHECK(text.rfind("class,source_image_id,augmentation_id,score,round\n", 0) == 0);
    CHECK(text.find("2,7,3,") != std::string::npos);
  }
}
