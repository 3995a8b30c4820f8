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

#include "ltdd/ltdd.h"

#include <algorithm>
#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "core/error.hpp"
#include "data/dataset.hpp"
#include "pipeline/config.hpp"
#include "pipeline/pipeline.hpp"
#include "relabel/distilled.hpp"

struct ltdd_config {
  ltdd::PipelineConfig cfg;
};

struct ltdd_dataset {
  ltdd::Dataset ds;
};

struct ltdd_eval_report {
  ltdd::EvalReport report;
};

namespace {

thread_local std::string g_last_error;

ltdd_status to_status(ltdd::ErrorCode code) {
  switch (code) {
    case ltdd::ErrorCode::kInvalidArgument: return LTDD_ERR_INVALID_ARGUMENT;
    case ltdd::ErrorCode::kIo: return LTDD_ERR_IO;
    case ltdd::ErrorCode::kFormat: return LTDD_ERR_FORMAT;
    case ltdd::ErrorCode::kNumeric: return LTDD_ERR_NUMERIC;
    case ltdd::ErrorCode::kProvenance: return LTDD_ERR_PROVENANCE;
    case ltdd::ErrorCode::kConfig: return LTDD_ERR_CONFIG;
    case ltdd::ErrorCode::kInternal: return LTDD_ERR_INTERNAL;
  }
  return LTDD_ERR_INTERNAL;
}

template <typename F>
ltdd_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return LTDD_OK;
  } catch (const ltdd::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return LTDD_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return LTDD_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (p == nullptr) ltdd::fail(ltdd::ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

std::string opt(const char* s) { return s ? s : ""; }

}  // namespace

extern "C" {

const char* ltdd_last_error(void) { return g_last_error.c_str(); }

const char* ltdd_version(void) { return "0.1.0"; }

ltdd_status ltdd_config_new(ltdd_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new ltdd_config{};
  });
}

ltdd_status ltdd_config_load(const char* path, ltdd_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ltdd_config{ltdd::PipelineConfig::load(path)};
  });
}

ltdd_status ltdd_config_parse(const char* text, ltdd_config** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = new ltdd_config{ltdd::PipelineConfig::parse(text)};
  });
}

ltdd_status ltdd_config_set(ltdd_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    need(value, "value");
    cfg->cfg.set(key, value);
  });
}

ltdd_status ltdd_config_get(const ltdd_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "cfg");
    need(key, "key");
    const std::string& v = cfg->cfg.get(key);
    if (needed) *needed = v.size() + 1;
    if (buf && cap > 0) {
      const size_t n = std::min(cap - 1, v.size());
      std::memcpy(buf, v.data(), n);
      buf[n] = '\0';
    }
  });
}

ltdd_status ltdd_config_validate(const ltdd_config* cfg) {
  return guarded([&] {
    need(cfg, "cfg");
    cfg->cfg.validate();
  });
}

void ltdd_config_free(ltdd_config* cfg) { delete cfg; }

size_t ltdd_config_key_count(void) { return ltdd::config_keys().size(); }

ltdd_status ltdd_config_key_at(size_t index, const char** name, const char** default_value, const char** help) {
  return guarded([&] {
    const auto keys = ltdd::config_keys();
    if (index >= keys.size()) ltdd::fail(ltdd::ErrorCode::kInvalidArgument, "config key index out of range");
    if (name) *name = keys[index].name;
    if (default_value) *default_value = keys[index].default_value;
    if (help) *help = keys[index].help;
  });
}

ltdd_status ltdd_dataset_load(const char* path, ltdd_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ltdd_dataset{ltdd::load_dataset(path)};
  });
}

ltdd_status ltdd_dataset_load_manifest(const char* csv_path, int channels, int height, int width, int num_classes,
                                       ltdd_dataset** out) {
  return guarded([&] {
    need(csv_path, "csv_path");
    need(out, "out");
    *out = new ltdd_dataset{ltdd::load_manifest(csv_path, channels, height, width, num_classes)};
  });
}

ltdd_status ltdd_dataset_gen_blobs(int num_classes, int per_class, int channels, int height, int width,
                                   uint64_t seed, const char* style, ltdd_dataset** out) {
  return guarded([&] {
    need(out, "out");
    *out = new ltdd_dataset{ltdd::gen_blobs(num_classes, per_class, channels, height, width, seed,
                                            ltdd::BlobStyle::named(style ? style : "standard"))};
  });
}

ltdd_status ltdd_dataset_make_long_tail(const ltdd_dataset* source, int largest_class_count, double imbalance_factor,
                                        uint64_t seed, ltdd_dataset** out) {
  return guarded([&] {
    need(source, "source");
    need(out, "out");
    const ltdd::LongTailSpec spec{source->ds.num_classes, largest_class_count, imbalance_factor, seed};
    *out = new ltdd_dataset{ltdd::make_long_tail(source->ds, spec)};
  });
}

ltdd_status ltdd_dataset_balanced_split(const ltdd_dataset* source, size_t per_class, uint64_t seed,
                                        ltdd_dataset** test, ltdd_dataset** remainder) {
  return guarded([&] {
    need(source, "source");
    need(test, "test");
    need(remainder, "remainder");
    auto [t, r] = ltdd::balanced_split(source->ds, per_class, seed);
    auto* th = new ltdd_dataset{std::move(t)};
    *remainder = new ltdd_dataset{std::move(r)};
    *test = th;
  });
}

ltdd_status ltdd_dataset_save(const ltdd_dataset* ds, const char* path) {
  return guarded([&] {
    need(ds, "ds");
    need(path, "path");
    ltdd::save_dataset(path, ds->ds);
  });
}

ltdd_status ltdd_dataset_info(const ltdd_dataset* ds, size_t* size, int* num_classes, int* channels, int* height,
                              int* width) {
  return guarded([&] {
    need(ds, "ds");
    if (size) *size = ds->ds.size();
    if (num_classes) *num_classes = ds->ds.num_classes;
    if (channels) *channels = ds->ds.channels;
    if (height) *height = ds->ds.height;
    if (width) *width = ds->ds.width;
  });
}

ltdd_status ltdd_dataset_class_counts(const ltdd_dataset* ds, size_t* counts, size_t cap) {
  return guarded([&] {
    need(ds, "ds");
    need(counts, "counts");
    const auto c = ds->ds.class_counts();
    std::copy_n(c.begin(), std::min(cap, c.size()), counts);
  });
}

void ltdd_dataset_free(ltdd_dataset* ds) { delete ds; }

ltdd_status ltdd_make_lt(const ltdd_config* cfg, const char* train_out, const char* test_out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(train_out, "train_out");
    need(test_out, "test_out");
    cfg->cfg.validate();
    ltdd::stage_make_lt(cfg->cfg, train_out, test_out);
  });
}

ltdd_status ltdd_train_expert(const ltdd_config* cfg, const char* role, const char* train_path, const char* ckpt_out,
                              const char* log_out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(role, "role");
    need(train_path, "train_path");
    need(ckpt_out, "ckpt_out");
    const std::string r = role;
    if (r != "observer" && r != "teacher")
      ltdd::fail(ltdd::ErrorCode::kConfig, "role must be observer or teacher");
    cfg->cfg.validate();
    ltdd::stage_train_expert(cfg->cfg, r == "observer" ? ltdd::ExpertRole::kObserver : ltdd::ExpertRole::kTeacher,
                             train_path, ckpt_out, opt(log_out));
  });
}

ltdd_status ltdd_recalibrate(const ltdd_config* cfg, const char* observer_path, const char* train_path,
                             const char* bundle_out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(observer_path, "observer_path");
    need(train_path, "train_path");
    need(bundle_out, "bundle_out");
    cfg->cfg.validate();
    ltdd::stage_recalibrate(cfg->cfg, observer_path, train_path, bundle_out);
  });
}

ltdd_status ltdd_init(const ltdd_config* cfg, const char* teacher_path, const char* train_path, const char* init_out,
                      const char* selection_out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(train_path, "train_path");
    need(init_out, "init_out");
    cfg->cfg.validate();
    if (!cfg->cfg.naive_init()) need(teacher_path, "teacher_path");
    ltdd::stage_init(cfg->cfg, opt(teacher_path), train_path, init_out, opt(selection_out));
  });
}

ltdd_status ltdd_recover(const ltdd_config* cfg, const char* init_path, const char* observer_path,
                         const char* bundle_path, const char* recovered_out, const char* report_out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(init_path, "init_path");
    need(observer_path, "observer_path");
    need(bundle_path, "bundle_path");
    need(recovered_out, "recovered_out");
    cfg->cfg.validate();
    ltdd::stage_recover(cfg->cfg, init_path, observer_path, bundle_path, recovered_out, opt(report_out));
  });
}

ltdd_status ltdd_relabel(const ltdd_config* cfg, const char* recovered_path, const char* teacher_path,
                         const char* observer_path, const char* bundle_path, const char* distilled_dir) {
  return guarded([&] {
    need(cfg, "cfg");
    need(recovered_path, "recovered_path");
    need(teacher_path, "teacher_path");
    need(distilled_dir, "distilled_dir");
    cfg->cfg.validate();
    ltdd::stage_relabel(cfg->cfg, recovered_path, teacher_path, opt(observer_path), opt(bundle_path), distilled_dir);
  });
}

ltdd_status ltdd_eval(const ltdd_config* cfg, const char* distilled_dir, const char* test_path, const char* eval_out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(distilled_dir, "distilled_dir");
    need(test_path, "test_path");
    need(eval_out, "eval_out");
    cfg->cfg.validate();
    ltdd::stage_eval(cfg->cfg, distilled_dir, test_path, eval_out);
  });
}

ltdd_status ltdd_run_pipeline(const ltdd_config* cfg, ltdd_log_fn log, void* user, size_t* skipped_stages) {
  return guarded([&] {
    need(cfg, "cfg");
    ltdd::LogFn fn;
    if (log) fn = [log, user](const std::string& m) { log(m.c_str(), user); };
    const auto outcomes = ltdd::run_pipeline(cfg->cfg, fn);
    if (skipped_stages)
      *skipped_stages = static_cast<size_t>(
          std::count_if(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.skipped; }));
  });
}

ltdd_status ltdd_report(const char* output_dir) {
  return guarded([&] {
    need(output_dir, "output_dir");
    ltdd::write_report(output_dir);
  });
}

ltdd_status ltdd_eval_report_load(const char* path, ltdd_eval_report** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ltdd_eval_report{ltdd::load_eval(path)};
  });
}

ltdd_status ltdd_eval_report_summary(const ltdd_eval_report* r, double* overall, double* balanced,
                                     size_t* num_seeds) {
  return guarded([&] {
    need(r, "r");
    if (overall) *overall = r->report.overall;
    if (balanced) *balanced = r->report.balanced;
    if (num_seeds) *num_seeds = r->report.seeds.size();
  });
}

ltdd_status ltdd_eval_report_per_class(const ltdd_eval_report* r, double* out, size_t cap, size_t* num_classes) {
  return guarded([&] {
    need(r, "r");
    const auto& pc = r->report.per_class;
    if (num_classes) *num_classes = pc.size();
    if (out) std::copy_n(pc.begin(), std::min(cap, pc.size()), out);
  });
}

void ltdd_eval_report_free(ltdd_eval_report* r) { delete r; }

}  // extern "C"
