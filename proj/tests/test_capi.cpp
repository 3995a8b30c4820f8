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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ltdd/ltdd.h"

namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ltdd_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

const char* kTinyConfig =
    "data.num_classes=3\ndata.height=8\ndata.width=8\ndata.blobs_per_class=30\ndata.test_per_class=5\n"
    "lt.largest_class_count=20\nlt.imbalance_factor=4\nmodel.depth=2\nmodel.width=4\nexpert.iterations=6\n"
    "expert.batch_size=8\ninit.ipc=2\ninit.n_aug=2\nrecovery.iterations=4\neval.epochs=2\neval.batch_size=3\n"
    "eval.seeds=0,1\ndeterministic=1\n";

std::string get(const ltdd_config* cfg, const char* key) {
  size_t needed = 0;
  REQUIRE(ltdd_config_get(cfg, key, nullptr, 0, &needed) == LTDD_OK);
  std::string out(needed, '\0');
  REQUIRE(ltdd_config_get(cfg, key, out.data(), out.size(), nullptr) == LTDD_OK);
  out.resize(needed - 1);
  return out;
}

void collect(const char* msg, void* user) { static_cast<std::vector<std::string>*>(user)->push_back(msg); }

}  // namespace

TEST_SUITE("capi") {
  TEST_CASE("version and error reporting") {
    CHECK(std::string(ltdd_version()) == "0.1.0");
    ltdd_config* cfg = nullptr;
    CHECK(ltdd_config_parse("bogus.key=1\n", &cfg) == LTDD_ERR_CONFIG);
    CHECK(cfg == nullptr);
    CHECK(std::string(ltdd_last_error()).find("bogus.key") != std::string::npos);
    CHECK(ltdd_config_new(nullptr) == LTDD_ERR_INVALID_ARGUMENT);
    ltdd_config_free(nullptr);
    ltdd_dataset_free(nullptr);
    ltdd_eval_report_free(nullptr);
  }

  TEST_CASE("configuration handle") {
    ltdd_config* cfg = nullptr;
    REQUIRE(ltdd_config_new(&cfg) == LTDD_OK);
    CHECK(get(cfg, "recovery.iterations") == "1000");
    CHECK(ltdd_config_set(cfg, "recovery.iterations", "7") == LTDD_OK);
    CHECK(get(cfg, "recovery.iterations") == "7");
    CHECK(ltdd_config_set(cfg, "nope", "7") == LTDD_ERR_CONFIG);
    CHECK(ltdd_config_validate(cfg) == LTDD_OK);
    CHECK(ltdd_config_set(cfg, "init.ipc", "0") == LTDD_OK);
    CHECK(ltdd_config_validate(cfg) == LTDD_ERR_CONFIG);

    char small[3];
    size_t needed = 0;
    CHECK(ltdd_config_get(cfg, "output_dir", small, sizeof small, &needed) == LTDD_OK);
    CHECK(needed == std::string("ltdd_out").size() + 1);
    CHECK(std::string(small) == "lt");
    ltdd_config_free(cfg);

    CHECK(ltdd_config_key_count() > 40);
    const char *name = nullptr, *def = nullptr, *help = nullptr;
    CHECK(ltdd_config_key_at(0, &name, &def, &help) == LTDD_OK);
    CHECK(name != nullptr);
    CHECK(ltdd_config_key_at(ltdd_config_key_count(), &name, &def, &help) == LTDD_ERR_INVALID_ARGUMENT);

    const auto dir = fresh_dir("cfg");
    std::ofstream(dir + "/a.cfg") << "seed=9\n";
    REQUIRE(ltdd_config_load((dir + "/a.cfg").c_str(), &cfg) == LTDD_OK);
    CHECK(get(cfg, "seed") == "9");
    ltdd_config_free(cfg);
    CHECK(ltdd_config_load((dir + "/missing.cfg").c_str(), &cfg) == LTDD_ERR_CONFIG);
  }

  TEST_CASE("dataset handle") {
    ltdd_dataset* full = nullptr;
    REQUIRE(ltdd_dataset_gen_blobs(4, 20, 3, 8, 8, 1, nullptr, &full) == LTDD_OK);
    ltdd_dataset *test = nullptr, *rest = nullptr, *lt = nullptr;
    REQUIRE(ltdd_dataset_balanced_split(full, 5, 2, &test, &rest) == LTDD_OK);
    REQUIRE(ltdd_dataset_make_long_tail(rest, 15, 5.0, 0, &lt) == LTDD_OK);
    size_t counts[4] = {};
    CHECK(ltdd_dataset_class_counts(lt, counts, 4) == LTDD_OK);
    CHECK(counts[0] == 15);
    CHECK(counts[3] == 3);
    size_t n = 0;
    int c = 0, ch = 0, h = 0, w = 0;
    CHECK(ltdd_dataset_info(test, &n, &c, &ch, &h, &w) == LTDD_OK);
    CHECK(n == 20);
    CHECK(c == 4);

    const auto dir = fresh_dir("dataset");
    CHECK(ltdd_dataset_save(lt, (dir + "/lt.ltdd").c_str()) == LTDD_OK);
    ltdd_dataset* back = nullptr;
    REQUIRE(ltdd_dataset_load((dir + "/lt.ltdd").c_str(), &back) == LTDD_OK);
    size_t counts2[4] = {};
    ltdd_dataset_class_counts(back, counts2, 4);
    CHECK(std::equal(counts, counts + 4, counts2));
    CHECK(ltdd_dataset_load((dir + "/none.ltdd").c_str(), &back) == LTDD_ERR_IO);
    CHECK(ltdd_dataset_make_long_tail(rest, 0, 5.0, 0, &lt) == LTDD_ERR_INVALID_ARGUMENT);
    for (auto* d : {full, test, rest, lt}) ltdd_dataset_free(d);
    ltdd_dataset_free(back);
  }

  TEST_CASE("stage by stage, then the whole pipeline") {
    const auto dir = fresh_dir("stages");
    ltdd_config* cfg = nullptr;
    REQUIRE(ltdd_config_parse(kTinyConfig, &cfg) == LTDD_OK);
    auto p = [&](const char* rel) { return dir + "/" + rel; };
    CHECK(ltdd_make_lt(cfg, p("train.ltdd").c_str(), p("test.ltdd").c_str()) == LTDD_OK);
    CHECK(ltdd_train_expert(cfg, "observer", p("train.ltdd").c_str(), p("obs.ckpt").c_str(), nullptr) == LTDD_OK);
    CHECK(ltdd_train_expert(cfg, "teacher", p("train.ltdd").c_str(), p("tea.ckpt").c_str(),
                            p("tea.csv").c_str()) == LTDD_OK);
    CHECK(ltdd_train_expert(cfg, "student", p("train.ltdd").c_str(), p("x.ckpt").c_str(), nullptr) ==
          LTDD_ERR_CONFIG);
    CHECK(ltdd_recalibrate(cfg, p("obs.ckpt").c_str(), p("train.ltdd").c_str(), p("stats.bin").c_str()) == LTDD_OK);
    CHECK(ltdd_init(cfg, p("tea.ckpt").c_str(), p("train.ltdd").c_str(), p("init.bin").c_str(),
                    p("sel.csv").c_str()) == LTDD_OK);
    CHECK(ltdd_recover(cfg, p("init.bin").c_str(), p("obs.ckpt").c_str(), p("stats.bin").c_str(),
                       p("rec.bin").c_str(), nullptr) == LTDD_OK);
    // Statistics of one observer cannot drive recovery under another.
    CHECK(ltdd_recover(cfg, p("init.bin").c_str(), p("tea.ckpt").c_str(), p("stats.bin").c_str(),
                       p("rec2.bin").c_str(), nullptr) == LTDD_ERR_PROVENANCE);
    CHECK(ltdd_relabel(cfg, p("rec.bin").c_str(), p("tea.ckpt").c_str(), nullptr, nullptr, p("distilled").c_str()) ==
          LTDD_OK);
    CHECK(ltdd_eval(cfg, p("distilled").c_str(), p("test.ltdd").c_str(), p("eval.txt").c_str()) == LTDD_OK);

    ltdd_eval_report* r = nullptr;
    REQUIRE(ltdd_eval_report_load(p("eval.txt").c_str(), &r) == LTDD_OK);
    double overall = -1, balanced = -1;
    size_t seeds = 0;
    CHECK(ltdd_eval_report_summary(r, &overall, &balanced, &seeds) == LTDD_OK);
    CHECK(seeds == 2);
    CHECK((balanced >= 0.0 && balanced <= 1.0));
    double pc[3];
    size_t classes = 0;
    CHECK(ltdd_eval_report_per_class(r, pc, 3, &classes) == LTDD_OK);
    CHECK(classes == 3);
    CHECK((pc[0] + pc[1] + pc[2]) / 3 == doctest::Approx(balanced));
    ltdd_eval_report_free(r);

    REQUIRE(ltdd_config_set(cfg, "output_dir", p("run").c_str()) == LTDD_OK);
    std::vector<std::string> log;
    size_t skipped = 99;
    CHECK(ltdd_run_pipeline(cfg, collect, &log, &skipped) == LTDD_OK);
    CHECK(skipped == 0);
    CHECK_FALSE(log.empty());
    CHECK(ltdd_run_pipeline(cfg, nullptr, nullptr, &skipped) == LTDD_OK);
    CHECK(skipped == 8);
    CHECK(ltdd_report(p("run").c_str()) == LTDD_OK);
    CHECK(ltdd_report(p("nowhere").c_str()) == LTDD_ERR_IO);
    ltdd_config_free(cfg);
  }
}
