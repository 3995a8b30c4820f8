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

#include "pipeline/pipeline.hpp"

#include <Eigen/Core>
#include <array>
#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>

#include "core/binio.hpp"
#include "core/error.hpp"
#include "core/hash.hpp"

namespace fs = std::filesystem;

namespace ltdd {

namespace {

constexpr std::uint32_t kImageSetVersion = 1;
constexpr std::array<const char*, 8> kStages{"make-lt", "observer", "teacher", "recalibrate",
                                             "init",    "recover",  "relabel", "eval"};

std::string path_in(const std::string& dir, const std::string& rel) { return (fs::path(dir) / rel).string(); }

void ensure_parent(const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

std::string artifact_hash(const std::string& path) {
  return fs::is_directory(path) ? distilled_hash(path) : sha256_file(path);
}

std::string section_text(const PipelineConfig& cfg, std::initializer_list<const char*> prefixes) {
  std::ostringstream os;
  for (const auto& k : config_keys()) {
    const std::string name = k.name;
    for (const char* p : prefixes)
      if (name.rfind(p, 0) == 0) os << name << '=' << cfg.get(name) << '\n';
  }
  return os.str();
}

std::string spec_text(const ConvNetSpec& s) {
  std::ostringstream os;
  os << "depth=" << s.depth << "\nwidth=" << s.width << "\nchannels=" << s.channels << "\nheight=" << s.height
     << "\nimage_width=" << s.image_width << "\nnum_classes=" << s.num_classes << '\n';
  return os.str();
}

std::string init_text(const PipelineConfig& cfg) {
  const InitConfig c = cfg.init_config();
  std::ostringstream os;
  os << std::setprecision(17) << "naive=" << (cfg.naive_init() ? 1 : 0) << "\nipc=" << c.ipc << "\nn_aug=" << c.n_aug
     << "\nregen_batches=" << c.regen_batches << "\narea=" << c.crop.area_min << ',' << c.crop.area_max
     << "\nseed=" << c.seed << '\n';
  return os.str();
}

struct StageDef {
  std::string name;
  std::string config_text;
  std::vector<std::string> inputs;   // paths relative to the output dir
  std::vector<std::string> outputs;  // paths relative to the output dir
  std::function<void()> body;
};

std::map<std::string, std::string> parse_record(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

// Header of a provenance record: everything that decides whether a stage is
// up to date, without the output hashes.
std::string record_header(const std::string& dir, const StageDef& st) {
  std::ostringstream os;
  os << "stage=" << st.name << '\n' << "config=" << sha256_hex(st.config_text) << '\n';
  for (const auto& in : st.inputs) os << "input " << in << '=' << artifact_hash(path_in(dir, in)) << '\n';
  return os.str();
}

}  // namespace

void save_image_set(const std::string& path, const Tensor<float>& images, std::span<const int> labels) {
  if (images.rank() != 4 || images.dim(0) != labels.size())
    fail(ErrorCode::kInvalidArgument, "image set: tensor and labels disagree");
  binio::Writer w;
  w.tag("LTIS");
  w.u32(kImageSetVersion);
  for (std::size_t d = 0; d < 4; ++d) w.u32(static_cast<std::uint32_t>(images.dim(d)));
  for (int y : labels) w.u32(static_cast<std::uint32_t>(y));
  w.f32s(images.data());
  ensure_parent(path);
  binio::write_file(path, w.take());
}

ImageSet load_image_set(const std::string& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes, "image set");
  r.expect_tag("LTIS");
  if (r.u32() != kImageSetVersion) fail(ErrorCode::kFormat, "image set: unsupported version");
  Shape shape(4);
  for (auto& d : shape) d = r.u32();
  ImageSet s;
  for (std::size_t i = 0; i < shape[0]; ++i) s.labels.push_back(static_cast<int>(r.u32()));
  std::vector<float> px(shape_numel(shape));
  r.f32s(px);
  if (r.remaining() != 0) fail(ErrorCode::kFormat, "image set: trailing bytes");
  s.images = Tensor<float>::from(shape, std::move(px));
  return s;
}

void stage_make_lt(const PipelineConfig& cfg, const std::string& train_out, const std::string& test_out) {
  const auto spec = cfg.network_spec();
  const auto& source = cfg.get("data.source");
  Dataset full;
  if (source == "blobs") {
    if (cfg.get_int("data.blobs_per_class") < cfg.get_int("data.test_per_class") + cfg.get_int("lt.largest_class_count"))
      fail(ErrorCode::kConfig, "data.blobs_per_class must cover the test split and the largest class");
    full = gen_blobs(spec.num_classes, static_cast<int>(cfg.get_int("data.blobs_per_class")), spec.channels,
                     spec.height, spec.image_width, cfg.derived_seed(1), BlobStyle::named(cfg.get("data.blob_style")));
  } else if (source == "file") {
    full = load_dataset(cfg.get("data.path"));
    if (full.num_classes != spec.num_classes || full.channels != spec.channels || full.height != spec.height ||
        full.width != spec.image_width)
      fail(ErrorCode::kConfig, "data.path geometry does not match data.* settings");
  } else {
    full = load_manifest(cfg.get("data.path"), spec.channels, spec.height, spec.image_width, spec.num_classes);
  }
  auto [test, rest] = balanced_split(full, static_cast<std::size_t>(cfg.get_int("data.test_per_class")),
                                     cfg.derived_seed(7));
  const Dataset train = make_long_tail(rest, cfg.long_tail_spec());
  ensure_parent(train_out);
  ensure_parent(test_out);
  save_dataset(train_out, train);
  save_dataset(test_out, test);
}

void stage_train_expert(const PipelineConfig& cfg, ExpertRole role, const std::string& train_path,
                        const std::string& ckpt_out, const std::string& log_out) {
  const Dataset train = load_dataset(train_path);
  std::vector<TrainLogRow> log;
  const auto ckpt = train_expert(train, cfg.network_spec(), cfg.expert_config(role), &log);
  ensure_parent(ckpt_out);
  save_expert(ckpt_out, ckpt);
  if (!log_out.empty()) write_train_log(log_out, log);
}

void stage_recalibrate(const PipelineConfig& cfg, const std::string& observer_path, const std::string& train_path,
                       const std::string& bundle_out) {
  const auto observer = load_expert(observer_path);
  const Dataset train = load_dataset(train_path);
  const auto bundle = cfg.no_recalibration()
                          ? running_stats_bundle(observer, train)
                          : recalibrate(observer, train, cfg.recal_batch_size(), cfg.finalize_options());
  ensure_parent(bundle_out);
  save_stats(bundle_out, bundle);
}

void stage_init(const PipelineConfig& cfg, const std::string& teacher_path, const std::string& train_path,
                const std::string& init_out, const std::string& selection_out) {
  const Dataset train = load_dataset(train_path);
  const InitConfig ic = cfg.init_config();
  InitImages init;
  if (cfg.naive_init()) {
    init = random_real_init(train, ic);
  } else {
    CandidatePool pool;
    init = confidence_guided_init(load_expert(teacher_path), train, ic, &pool);
    if (!selection_out.empty()) write_pool_dump(path_in(fs::path(selection_out).parent_path().string(), "pool.csv"), pool);
  }
  save_image_set(init_out, init.images, init.labels);
  if (!selection_out.empty()) write_selection_csv(selection_out, init.selections);
}

void stage_recover(const PipelineConfig& cfg, const std::string& init_path, const std::string& observer_path,
                   const std::string& bundle_path, const std::string& recovered_out, const std::string& report_out) {
  const auto init = load_image_set(init_path);
  const auto res = recover(init.images, init.labels, load_expert(observer_path), load_stats(bundle_path),
                           cfg.recovery_config());
  save_image_set(recovered_out, res.images, init.labels);
  if (!report_out.empty()) res.report.write_csv(report_out);
}

void stage_relabel(const PipelineConfig& cfg, const std::string& recovered_path, const std::string& teacher_path,
                   const std::string& observer_path, const std::string& bundle_path, const std::string& distilled_dir) {
  const auto rec = load_image_set(recovered_path);
  const auto teacher = load_expert(teacher_path);
  DistilledSet d;
  d.num_classes = cfg.network_spec().num_classes;
  if (rec.labels.size() % static_cast<std::size_t>(d.num_classes) != 0)
    fail(ErrorCode::kInvalidArgument, "relabel: recovered set is not class-balanced");
  d.ipc = static_cast<int>(rec.labels.size() / static_cast<std::size_t>(d.num_classes));
  d.images = rec.images;
  d.hard_labels = rec.labels;
  d.soft_labels = relabel(teacher, rec.images);
  d.provenance["teacher"] = teacher.hash();
  d.provenance["recovered"] = sha256_file(recovered_path);
  if (!observer_path.empty()) d.provenance["observer"] = sha256_file(observer_path);
  if (!bundle_path.empty()) d.provenance["bundle"] = sha256_file(bundle_path);
  save_distilled(distilled_dir, d);
}

void stage_eval(const PipelineConfig& cfg, const std::string& distilled_dir, const std::string& test_path,
                const std::string& eval_out) {
  const auto distilled = load_distilled(distilled_dir);
  const Dataset test = load_dataset(test_path);
  std::vector<EvalReport> reports;
  for (auto s : cfg.eval_seeds()) {
    const auto student = train_student(distilled, cfg.network_spec(), cfg.student_config(s));
    reports.push_back(evaluate(student, test, s));
  }
  ensure_parent(eval_out);
  save_eval(eval_out, combine_reports(reports));
}

std::span<const char* const> stage_names() { return kStages; }

std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg, const LogFn& log) {
  cfg.validate();
  if (cfg.deterministic()) Eigen::setNbThreads(1);
  const std::string dir = cfg.output_dir();
  fs::create_directories(path_in(dir, "prov"));
  auto p = [&](const std::string& rel) { return path_in(dir, rel); };

  std::string source_input;
  if (cfg.get("data.source") != "blobs") source_input = fs::absolute(cfg.get("data.path")).string();

  std::vector<StageDef> stages;
  stages.push_back({"make-lt", section_text(cfg, {"data.", "lt."}) + "seed=" + cfg.get("seed") + '\n', {},
                    {"data/train.ltdd", "data/test.ltdd"},
                    [&] { stage_make_lt(cfg, p("data/train.ltdd"), p("data/test.ltdd")); }});
  for (auto role : {ExpertRole::kObserver, ExpertRole::kTeacher}) {
    const std::string name = role == ExpertRole::kObserver ? "observer" : "teacher";
    if (role == ExpertRole::kTeacher && cfg.get_bool("expert.shared")) {
      stages.push_back({name, "shared=observer\n", {"experts/observer.ckpt", "experts/observer_log.csv"},
                        {"experts/teacher.ckpt", "experts/teacher_log.csv"}, [&] {
                          for (const char* suffix : {".ckpt", "_log.csv"})
                            fs::copy_file(p(std::string("experts/observer") + suffix),
                                          p(std::string("experts/teacher") + suffix),
                                          fs::copy_options::overwrite_existing);
                        }});
      continue;
    }
    stages.push_back({name, spec_text(cfg.network_spec()) + cfg.expert_config(role).to_text(), {"data/train.ltdd"},
                      {"experts/" + name + ".ckpt", "experts/" + name + "_log.csv"}, [&, role, name] {
                        stage_train_expert(cfg, role, p("data/train.ltdd"), p("experts/" + name + ".ckpt"),
                                           p("experts/" + name + "_log.csv"));
                      }});
  }
  stages.push_back({"recalibrate",
                    "mode=" + std::string(cfg.no_recalibration() ? "running" : "recalibrated") + '\n' +
                        section_text(cfg, {"recal."}),
                    {"experts/observer.ckpt", "data/train.ltdd"},
                    {"stats/bundle.bin"},
                    [&] { stage_recalibrate(cfg, p("experts/observer.ckpt"), p("data/train.ltdd"), p("stats/bundle.bin")); }});
  stages.push_back({"init", init_text(cfg), {"experts/teacher.ckpt", "data/train.ltdd"},
                    {"init/init.bin", "init/selection.csv"}, [&] {
                      fs::remove(p("init/pool.csv"));
                      stage_init(cfg, p("experts/teacher.ckpt"), p("data/train.ltdd"), p("init/init.bin"),
                                 p("init/selection.csv"));
                    }});
  stages.push_back({"recover", cfg.recovery_config().to_text(),
                    {"init/init.bin", "experts/observer.ckpt", "stats/bundle.bin"},
                    {"recovery/recovered.bin", "recovery/alignment.csv"}, [&] {
                      stage_recover(cfg, p("init/init.bin"), p("experts/observer.ckpt"), p("stats/bundle.bin"),
                                    p("recovery/recovered.bin"), p("recovery/alignment.csv"));
                    }});
  stages.push_back({"relabel", "soft_labels=softmax\n",
                    {"recovery/recovered.bin", "experts/teacher.ckpt", "experts/observer.ckpt", "stats/bundle.bin"},
                    {"distilled"}, [&] {
                      stage_relabel(cfg, p("recovery/recovered.bin"), p("experts/teacher.ckpt"),
                                    p("experts/observer.ckpt"), p("stats/bundle.bin"), p("distilled"));
                    }});
  {
    std::string text = spec_text(cfg.network_spec());
    for (auto s : cfg.eval_seeds()) text += "[seed " + std::to_string(s) + "]\n" + cfg.student_config(s).to_text();
    stages.push_back({"eval", text, {"distilled", "data/test.ltdd"}, {"eval/eval.txt"},
                      [&] { stage_eval(cfg, p("distilled"), p("data/test.ltdd"), p("eval/eval.txt")); }});
  }

  std::vector<StageOutcome> outcomes;
  std::ostringstream manifest;
  for (auto& st : stages) {
    std::string header;
    try {
      header = record_header(dir, st);
      if (st.name == "make-lt" && !source_input.empty())
        header += "input " + source_input + '=' + sha256_file(source_input) + '\n';
    } catch (const Error& e) {
      fail(ErrorCode::kProvenance, "stage " + st.name + ": cannot hash inputs: " + e.what());
    }
    const std::string record_path = p("prov/" + st.name + ".txt");
    bool up_to_date = false;
    if (fs::exists(record_path)) {
      const std::string text = binio::read_text(record_path);
      if (text.rfind(header, 0) == 0) {
        const auto rec = parse_record(text.substr(header.size()));
        bool all_present = true;
        for (const auto& out : st.outputs) {
          const auto it = rec.find("output " + out);
          if (it == rec.end() || !fs::exists(p(out))) {
            all_present = false;
            continue;
          }
          if (artifact_hash(p(out)) != it->second)
            fail(ErrorCode::kProvenance,
                 "stage " + st.name + ": artifact " + out + " does not match its recorded hash");
        }
        up_to_date = all_present;
      }
    }
    if (up_to_date) {
      if (log) log(st.name + ": up to date, skipped");
    } else {
      if (log) log(st.name + ": running");
      fs::remove(record_path);
      try {
        st.body();
      } catch (const Error& e) {
        fail(e.code(), "stage " + st.name + ": " + e.what());
      }
      std::string record = header;
      for (const auto& out : st.outputs) record += "output " + out + '=' + artifact_hash(p(out)) + '\n';
      binio::write_text(p("prov/" + st.name + ".txt"), record);
      binio::write_text(p("prov/" + st.name + ".cfg"), st.config_text);
    }
    for (const auto& out : st.outputs) manifest << st.name << ',' << out << ',' << artifact_hash(p(out)) << '\n';
    outcomes.push_back({st.name, up_to_date});
  }
  binio::write_text(p("manifest.csv"), "stage,artifact,sha256\n" + manifest.str());
  write_report(dir);
  return outcomes;
}

void write_report(const std::string& dir) {
  const std::string eval_path = path_in(dir, "eval/eval.txt");
  if (!fs::exists(eval_path)) fail(ErrorCode::kIo, "report: missing eval artifact " + eval_path);
  const EvalReport r = load_eval(eval_path);
  const std::string out = path_in(dir, "report");
  fs::create_directories(out);

  std::ostringstream summary;
  summary << std::setprecision(9) << "seed,overall,balanced\n";
  for (std::size_t s = 0; s < r.seeds.size(); ++s)
    summary << r.seeds[s] << ',' << r.overall_per_seed[s] << ',' << r.balanced_per_seed[s] << '\n';
  summary << "mean," << r.overall << ',' << r.balanced << '\n';
  binio::write_text(path_in(out, "summary.csv"), summary.str());

  std::ostringstream per_class;
  per_class << std::setprecision(9) << "class,mean_accuracy";
  for (auto s : r.seeds) per_class << ",seed_" << s;
  per_class << '\n';
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    per_class << c << ',' << r.per_class[c];
    for (const auto& row : r.per_class_per_seed) per_class << ',' << row[c];
    per_class << '\n';
  }
  binio::write_text(path_in(out, "per_class.csv"), per_class.str());

  const int bar = 28, gap = 8, left = 50, top = 30, plot_h = 200;
  const int width = left + static_cast<int>(r.per_class.size()) * (bar + gap) + 20;
  const int height = top + plot_h + 50;
  std::ostringstream svg;
  svg << std::fixed << std::setprecision(2);
  svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
      << "  <title>Per-class accuracy (" << r.architecture << ", " << r.seeds.size() << " seeds)</title>\n"
      << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
      << "  <text x=\"" << left << "\" y=\"18\" font-family=\"sans-serif\" font-size=\"12\">balanced accuracy "
      << r.balanced << "</text>\n"
      << "  <line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << width - 10 << "\" y2=\""
      << top + plot_h << "\" stroke=\"black\"/>\n";
  for (int tick = 0; tick <= 4; ++tick) {
    const double y = top + plot_h - plot_h * tick / 4.0;
    svg << "  <text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" font-family=\"sans-serif\" font-size=\"10\" "
        << "text-anchor=\"end\">" << tick * 25 << "%</text>\n";
  }
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    const double h = plot_h * r.per_class[c];
    const int x = left + static_cast<int>(c) * (bar + gap) + gap / 2;
    svg << "  <rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar << "\" height=\"" << h
        << "\" fill=\"#4477aa\"/>\n"
        << "  <text x=\"" << x + bar / 2 << "\" y=\"" << top + plot_h + 14
        << "\" font-family=\"sans-serif\" font-size=\"10\" text-anchor=\"middle\">" << c << "</text>\n";
  }
  svg << "  <text x=\"" << width / 2 << "\" y=\"" << height - 10
      << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">class</text>\n"
      << "</svg>\n";
  binio::write_text(path_in(out, "chart.svg"), svg.str());
}

}  // namespace ltdd
