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
#include <filesystem>
#include <fstream>
#include <set>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/rng.hpp"
#include "data/augment.hpp"
#include "data/dataset.hpp"
#include "doctest.h"
#include "expert/expert.hpp"
#include "helpers.hpp"
#include "relabel/distilled.hpp"

using namespace ltdd;

TEST_SUITE("data") {
  TEST_CASE("long-tail counts follow the exponential profile") {
    CHECK(LongTailSpec{10, 500, 100.0, 0}.class_counts()[9] == 5);
    CHECK(LongTailSpec{10, 500, 10.0, 0}.class_counts()[5] == 139);
    const auto flat = LongTailSpec{10, 500, 1.0, 0}.class_counts();
    CHECK(std::all_of(flat.begin(), flat.end(), [](std::size_t n) { return n == 500; }));
  }

  TEST_CASE("fractional counts round half to even and never reach zero") {
    // 5 * 2^-1 = 2.5 -> 2, 7 * 2^-1 = 3.5 -> 4.
    CHECK(LongTailSpec{2, 5, 2.0, 0}.class_counts() == std::vector<std::size_t>{5, 2});
    CHECK(LongTailSpec{2, 7, 2.0, 0}.class_counts() == std::vector<std::size_t>{7, 4});
    CHECK(LongTailSpec{3, 2, 1000.0, 0}.class_counts().back() == 1);
  }

  TEST_CASE("counts are monotone and respect the ratio bound") {
    Rng rng(42);
    for (int trial = 0; trial < 300; ++trial) {
      const int c = 2 + static_cast<int>(rng.index(40));
      const double beta = 1.0 + rng.uniform(0.0, 200.0);
      const int n0 = static_cast<int>(std::ceil(2 * beta)) + static_cast<int>(rng.index(1000));
      const auto counts = LongTailSpec{c, n0, beta, 0}.class_counts();
      CAPTURE(c);
      CAPTURE(beta);
      CAPTURE(n0);
      REQUIRE(counts.size() == static_cast<std::size_t>(c));
      CHECK(counts.front() == static_cast<std::size_t>(n0));
      for (std::size_t k = 1; k < counts.size(); ++k) CHECK(counts[k] <= counts[k - 1]);
      const double ratio = static_cast<double>(counts.front()) / static_cast<double>(counts.back());
      CHECK(ratio >= beta / 2);
      CHECK(ratio <= 2 * beta);
    }
  }

  TEST_CASE("long-tail spec validation") {
    CHECK_THROWS_AS((LongTailSpec{1, 10, 2.0, 0}.validate()), Error);
    CHECK_THROWS_AS((LongTailSpec{3, 0, 2.0, 0}.validate()), Error);
    CHECK_THROWS_AS((LongTailSpec{3, 10, 0.5, 0}.validate()), Error);
  }

  TEST_CASE("make_long_tail keeps a seeded subset of each class") {
    const Dataset src = gen_blobs(4, 30, 3, 8, 8, 1);
    const LongTailSpec spec{4, 30, 10.0, 5};
    const Dataset lt = make_long_tail(src, spec);
    CHECK(lt.class_counts() == spec.class_counts());
    REQUIRE(lt.long_tail.has_value());
    for (std::size_t i = 0; i < lt.size(); ++i) {
      // Every kept image exists in the source under the same label.
      bool found = false;
      for (std::size_t j : src.per_class_index[static_cast<std::size_t>(lt.labels[i])])
        if (std::equal(lt.image(i).begin(), lt.image(i).end(), src.image(j).begin())) found = true;
      CHECK(found);
    }
    for (int c = 0; c < lt.num_classes; ++c)
      for (std::size_t i : lt.per_class_index[static_cast<std::size_t>(c)]) CHECK(lt.labels[i] == c);
    CHECK(make_long_tail(src, spec) == lt);
    CHECK_FALSE(make_long_tail(src, LongTailSpec{4, 30, 10.0, 6}) == lt);
    CHECK_THROWS_AS(make_long_tail(src, LongTailSpec{4, 31, 10.0, 5}), Error);
  }

  TEST_CASE("gen_blobs is deterministic and bounded by the palette") {
    const Dataset a = gen_blobs(5, 6, 3, 16, 16, 9);
    CHECK(serialize_dataset(a) == serialize_dataset(gen_blobs(5, 6, 3, 16, 16, 9)));
    CHECK(serialize_dataset(a) != serialize_dataset(gen_blobs(5, 6, 3, 16, 16, 10)));
    CHECK(a.class_counts() == std::vector<std::size_t>(5, 6));
    CHECK(gen_blobs(2, 3, 1, 8, 8, 0).channels == 1);
    CHECK_THROWS_AS(gen_blobs(max_blob_classes() + 1, 2, 3, 8, 8, 0), Error);
    CHECK_THROWS_AS(gen_blobs(2, 0, 3, 8, 8, 0), Error);
  }

  TEST_CASE("two blob classes are learnable by a depth-2 network") {
    const Dataset full = gen_blobs(2, 100, 3, 16, 16, 3);
    const auto [test, train] = balanced_split(full, 50, 4);
    ConvNetSpec spec;
    spec.depth = 2;
    spec.num_classes = 2;
    ExpertTrainConfig cfg;
    cfg.iterations = 150;
    cfg.batch_size = 32;
    cfg.gamma_robust = 0.0;
    cfg.q = 0.0;
    cfg.mixup = false;
    const auto expert = train_expert(train, spec, cfg);
    CHECK(evaluate(expert.model, test).overall >= 0.95);
  }

  TEST_CASE("binary round trip and damage detection") {
    const auto dir = test::temp_dir("data_io");
    const Dataset ds = gen_blobs(3, 4, 3, 8, 8, 2);
    const std::string path = dir + "/d.ltdd";
    save_dataset(path, ds);
    const auto bytes = binio::read_file(path);
    CHECK(load_dataset(path) == ds);
    CHECK(serialize_dataset(load_dataset(path)) == bytes);

    auto expect_error = [](std::vector<std::uint8_t> b, const char* fragment) {
      try {
        parse_dataset(b);
        FAIL("no error");
      } catch (const Error& e) {
        CHECK(std::string(e.what()).find(fragment) != std::string::npos);
      }
    };
    auto bad = bytes;
    bad[1] = 'X';
    expect_error(bad, "magic");
    expect_error({}, "truncated");
    expect_error(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 30), "truncated");
    bad = bytes;
    bad[bytes.size() / 2] ^= 0x40;
    expect_error(bad, "checksum");
    CHECK_THROWS_AS(load_dataset(dir + "/missing.ltdd"), Error);
  }

  TEST_CASE("manifest ingestion") {
    const auto dir = test::temp_dir("manifest");
    std::ofstream csv(dir + "/m.csv");
    csv << "path,label\n";
    for (int i = 0; i < 4; ++i) {
      const std::string name = "img" + std::to_string(i) + ".raw";
      std::ofstream(dir + "/" + name, std::ios::binary) << std::string(2 * 2, static_cast<char>(10 * i));
      csv << name << ',' << (i % 2) << '\n';
    }
    csv.close();
    const Dataset ds = load_manifest(dir + "/m.csv", 1, 2, 2, 2);
    CHECK(ds.size() == 4);
    CHECK(ds.class_counts() == std::vector<std::size_t>{2, 2});
    CHECK(ds.image(3)[0] == 30);

    std::ofstream(dir + "/bad.csv") << "file,label\nimg0.raw,0\n";
    CHECK_THROWS_AS(load_manifest(dir + "/bad.csv", 1, 2, 2, 2), Error);
    std::ofstream(dir + "/range.csv") << "path,label\nimg0.raw,5\n";
    CHECK_THROWS_AS(load_manifest(dir + "/range.csv", 1, 2, 2, 2), Error);
    std::ofstream(dir + "/size.csv") << "path,label\nimg0.raw,0\n";
    CHECK_THROWS_AS(load_manifest(dir + "/size.csv", 3, 2, 2, 2), Error);
  }

  TEST_CASE("balanced split") {
    const Dataset src = make_long_tail(gen_blobs(3, 20, 3, 8, 8, 1), LongTailSpec{3, 20, 4.0, 0});
    const auto min_count = src.class_counts().back();
    const auto [test, rest] = balanced_split(src, min_count, 3);
    CHECK(test.class_counts() == std::vector<std::size_t>(3, min_count));
    CHECK(rest.class_counts()[2] == 0);
    CHECK(test.size() + rest.size() == src.size());

    // Disjoint: every source image lands in exactly one side.
    std::multiset<std::vector<std::uint8_t>> all, split;
    for (std::size_t i = 0; i < src.size(); ++i) all.emplace(src.image(i).begin(), src.image(i).end());
    for (std::size_t i = 0; i < test.size(); ++i) split.emplace(test.image(i).begin(), test.image(i).end());
    for (std::size_t i = 0; i < rest.size(); ++i) split.emplace(rest.image(i).begin(), rest.image(i).end());
    CHECK(all == split);

    const auto [none, same] = balanced_split(src, 0, 3);
    CHECK(none.size() == 0);
    CHECK(same == src);
    CHECK_THROWS_AS(balanced_split(src, min_count + 1, 3), Error);
  }

  TEST_CASE("augmentations") {
    const ImageShape shape{2, 4, 5};
    const auto img = test::random_tensor<float>({2, 4, 5}, 8, 0.0, 1.0);
    const std::vector<float> x(img.data().begin(), img.data().end());

    auto flipped = x;
    hflip(flipped, shape);
    CHECK(flipped != x);
    hflip(flipped, shape);
    CHECK(flipped == x);

    CHECK(shift(x, shape, 0, 0) == x);
    const auto s = shift(x, shape, 1, -1);
    // Output pixel (y, x) reads input pixel (y + dy, x + dx).
    CHECK(s[0 * 5 + 4] == x[1 * 5 + 3]);
    CHECK(s[1 * 5 + 0] == 0.0f);
    CHECK(s[3 * 5 + 2] == 0.0f);

    Rng rng(1);
    const auto same = random_resized_crop(x, shape, ResizedCropConfig::identity(), rng);
    CHECK(same == x);
    const auto crop = random_resized_crop(x, shape, ResizedCropConfig{}, rng);
    CHECK(crop.size() == x.size());
    for (float v : crop) CHECK((v >= 0.0f && v <= 1.0f));
    CHECK_THROWS_AS(random_resized_crop(x, shape, ResizedCropConfig{0.0, 1.0, 1.0, 1.0, 0.5}, rng), Error);
  }
}
