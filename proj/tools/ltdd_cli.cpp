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
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ltdd/ltdd.h"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

class Failure : public std::exception {
 public:
  Failure(ltdd_status code, std::string msg) : code_(code), msg_(std::move(msg)) {}
  const char* what() const noexcept override { return msg_.c_str(); }
  ltdd_status code() const { return code_; }

 private:
  ltdd_status code_;
  std::string msg_;
};

void check(ltdd_status s) {
  if (s != LTDD_OK) throw Failure(s, ltdd_last_error());
}

using ConfigPtr = std::unique_ptr<ltdd_config, decltype(&ltdd_config_free)>;

// Settings shared by every subcommand: --config, --set key=value and one
// --<key> flag per configuration key.
struct Settings {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  bool deterministic = false;

  void attach(CLI::App* sub) {
    sub->add_option("--config", config_path, "key=value configuration file");
    sub->add_option("--set", sets, "override one key (key=value), repeatable");
    sub->add_flag("--deterministic", deterministic, "single-threaded bit-exact execution");
    for (size_t i = 0; i < ltdd_config_key_count(); ++i) {
      const char *name = nullptr, *def = nullptr, *help = nullptr;
      check(ltdd_config_key_at(i, &name, &def, &help));
      if (std::string(name) == "deterministic") continue;
      sub->add_option("--" + std::string(name), flags[name],
                      std::string(help) + " [default: " + def + "]");
    }
  }

  ConfigPtr build() const {
    ltdd_config* raw = nullptr;
    check(config_path.empty() ? ltdd_config_new(&raw) : ltdd_config_load(config_path.c_str(), &raw));
    ConfigPtr cfg(raw, ltdd_config_free);
    for (const auto& kv : sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Failure(LTDD_ERR_CONFIG, "--set expects key=value, got '" + kv + "'");
      check(ltdd_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
    }
    for (const auto& [k, v] : flags)
      if (!v.empty()) check(ltdd_config_set(cfg.get(), k.c_str(), v.c_str()));
    if (deterministic) check(ltdd_config_set(cfg.get(), "deterministic", "1"));
    check(ltdd_config_validate(cfg.get()));
    return cfg;
  }
};

std::string get(const ltdd_config* cfg, const char* key) {
  size_t needed = 0;
  check(ltdd_config_get(cfg, key, nullptr, 0, &needed));
  std::string out(needed, '\0');
  check(ltdd_config_get(cfg, key, out.data(), out.size(), nullptr));
  out.resize(needed - 1);
  return out;
}

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

void print_log(const char* message, void*) { std::fprintf(stderr, "[ltdd] %s\n", message); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed dataset distillation toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", ltdd_version());

  std::map<std::string, Settings> settings;
  std::map<std::string, std::string> paths;
  std::string role;
  auto sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    settings[name].attach(s);
    return s;
  };
  auto path = [&](CLI::App* s, const std::string& flag, const char* help, bool required = true) {
    auto* o = s->add_option("--" + flag, paths[std::string(s->get_name()) + ":" + flag], help);
    if (required) o->required();
  };

  auto* gen = sub("gen-blobs", "generate a balanced synthetic blob dataset");
  path(gen, "out", "output dataset file");
  auto* mk = sub("make-lt", "build the long-tailed train set and balanced test set");
  path(mk, "train-out", "long-tailed train dataset file");
  path(mk, "test-out", "balanced test dataset file");
  auto* tr = sub("train-expert", "train an observer or teacher expert");
  tr->add_option("--role", role, "observer | teacher")->required()->check(CLI::IsMember({"observer", "teacher"}));
  path(tr, "train", "train dataset file");
  path(tr, "out", "checkpoint file");
  path(tr, "log", "training log CSV", false);
  auto* rc = sub("recalibrate", "rebuild class-balanced BN statistics");
  path(rc, "observer", "observer checkpoint");
  path(rc, "train", "train dataset file");
  path(rc, "out", "statistics bundle file");
  auto* in = sub("init", "select initial synthetic images");
  path(in, "teacher", "teacher checkpoint (unused with ablation.naive_init)", false);
  path(in, "train", "train dataset file");
  path(in, "out", "initial image set file");
  path(in, "selection", "selection CSV", false);
  auto* rv = sub("recover", "optimize synthetic images to match BN statistics");
  path(rv, "init", "initial image set file");
  path(rv, "observer", "observer checkpoint");
  path(rv, "bundle", "statistics bundle file");
  path(rv, "out", "recovered image set file");
  path(rv, "report", "alignment report CSV", false);
  auto* rl = sub("relabel", "attach teacher soft labels and write the distilled set");
  path(rl, "recovered", "recovered image set file");
  path(rl, "teacher", "teacher checkpoint");
  path(rl, "observer", "observer checkpoint (recorded in provenance)", false);
  path(rl, "bundle", "statistics bundle (recorded in provenance)", false);
  path(rl, "out", "distilled set directory");
  auto* ev = sub("eval", "train students on the distilled set and evaluate them");
  path(ev, "distilled", "distilled set directory");
  path(ev, "test", "balanced test dataset file");
  path(ev, "out", "evaluation report file");
  sub("run", "run the whole pipeline under output_dir");
  auto* rp = sub("report", "write summary.csv, per_class.csv and chart.svg");
  path(rp, "dir", "pipeline output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  CLI::App* chosen = app.get_subcommands().front();
  const std::string name = chosen->get_name();
  auto p = [&](const char* flag) { return paths[name + ":" + flag]; };
  bool configured = false;
  try {
    const ConfigPtr cfg = settings[name].build();
    configured = true;
    const ltdd_config* c = cfg.get();
    if (name == "gen-blobs") {
      ltdd_dataset* ds = nullptr;
      check(ltdd_dataset_gen_blobs(std::stoi(get(c, "data.num_classes")), std::stoi(get(c, "data.blobs_per_class")),
                                   std::stoi(get(c, "data.channels")), std::stoi(get(c, "data.height")),
                                   std::stoi(get(c, "data.width")), std::stoull(get(c, "seed")), get(c, "data.blob_style").c_str(), &ds));
      std::unique_ptr<ltdd_dataset, decltype(&ltdd_dataset_free)> hold(ds, ltdd_dataset_free);
      check(ltdd_dataset_save(ds, p("out").c_str()));
    } else if (name == "make-lt") {
      check(ltdd_make_lt(c, p("train-out").c_str(), p("test-out").c_str()));
    } else if (name == "train-expert") {
      check(ltdd_train_expert(c, role.c_str(), p("train").c_str(), p("out").c_str(), opt(p("log"))));
    } else if (name == "recalibrate") {
      check(ltdd_recalibrate(c, p("observer").c_str(), p("train").c_str(), p("out").c_str()));
    } else if (name == "init") {
      check(ltdd_init(c, opt(p("teacher")), p("train").c_str(), p("out").c_str(), opt(p("selection"))));
    } else if (name == "recover") {
      check(ltdd_recover(c, p("init").c_str(), p("observer").c_str(), p("bundle").c_str(), p("out").c_str(),
                         opt(p("report"))));
    } else if (name == "relabel") {
      check(ltdd_relabel(c, p("recovered").c_str(), p("teacher").c_str(), opt(p("observer")), opt(p("bundle")),
                         p("out").c_str()));
    } else if (name == "eval") {
      check(ltdd_eval(c, p("distilled").c_str(), p("test").c_str(), p("out").c_str()));
      ltdd_eval_report* r = nullptr;
      check(ltdd_eval_report_load(p("out").c_str(), &r));
      double overall = 0, balanced = 0;
      ltdd_eval_report_summary(r, &overall, &balanced, nullptr);
      ltdd_eval_report_free(r);
      std::printf("overall=%.4f balanced=%.4f\n", overall, balanced);
    } else if (name == "run") {
      size_t skipped = 0;
      check(ltdd_run_pipeline(c, print_log, nullptr, &skipped));
      std::printf("pipeline finished (%zu stages up to date) in %s\n", skipped, get(c, "output_dir").c_str());
    } else if (name == "report") {
      check(ltdd_report(p("dir").c_str()));
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "ltdd %s: %s\n", name.c_str(), f.what());
    return (f.code() == LTDD_ERR_CONFIG || !configured) ? kExitConfig : kExitStage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "ltdd %s: %s\n", name.c_str(), e.what());
    return configured ? kExitStage : kExitConfig;
  }
  return kExitOk;
}
