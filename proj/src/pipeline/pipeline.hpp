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

#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/tensor.hpp"
#include "pipeline/config.hpp"

namespace ltdd {

// Labelled image tensor on disk: "LTIS", u32 version, u32 N, ch, H, W, N u32
// labels, then f32 pixels.
struct ImageSet {
  Tensor<float> images;
  std::vector<int> labels;
};
void save_image_set(const std::string& path, const Tensor<float>& images, std::span<const int> labels);
ImageSet load_image_set(const std::string& path);

// File-level stage bodies shared by the pipeline and the CLI subcommands.
// Each returns after writing its outputs; none checks provenance records.
void stage_make_lt(const PipelineConfig& cfg, const std::string& train_out, const std::string& test_out);
void stage_train_expert(const PipelineConfig& cfg, ExpertRole role, const std::string& train_path,
                        const std::string& ckpt_out, const std::string& log_out);
void stage_recalibrate(const PipelineConfig& cfg, const std::string& observer_path, const std::string& train_path,
                       const std::string& bundle_out);
void stage_init(const PipelineConfig& cfg, const std::string& teacher_path, const std::string& train_path,
                const std::string& init_out, const std::string& selection_out);
void stage_recover(const PipelineConfig& cfg, const std::string& init_path, const std::string& observer_path,
                   const std::string& bundle_path, const std::string& recovered_out, const std::string& report_out);
void stage_relabel(const PipelineConfig& cfg, const std::string& recovered_path, const std::string& teacher_path,
                   const std::string& observer_path, const std::string& bundle_path, const std::string& distilled_dir);
void stage_eval(const PipelineConfig& cfg, const std::string& distilled_dir, const std::string& test_path,
                const std::string& eval_out);

struct StageOutcome {
  std::string name;
  bool skipped = false;
};

using LogFn = std::function<void(const std::string&)>;

// make-lt -> observer -> teacher -> recalibrate -> init -> recover -> relabel
// -> eval, then report. A stage is skipped when its provenance record matches
// the current config and inputs and its outputs still hash to the recorded
// values; a recorded output whose bytes changed is a provenance error.
std::vector<StageOutcome> run_pipeline(const PipelineConfig& cfg, const LogFn& log = {});

// summary.csv (per-seed and mean accuracy), per_class.csv and chart.svg under
// <dir>/report.
void write_report(const std::string& dir);

// Names of the stages in execution order.
std::span<const char* const> stage_names();

}  // namespace ltdd
