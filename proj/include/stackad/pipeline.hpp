/*
 * Copyright 2026 The stackad Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "stackad/csp.hpp"
#include "stackad/efa.hpp"
#include "stackad/metrics.hpp"
#include "stackad/prompts.hpp"
#include "stackad/rpl.hpp"

namespace stackad {

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path manifest;
  std::filesystem::path feature_root;   // empty: the manifest's directory
  std::filesystem::path output_root;
  std::filesystem::path text_features;  // files provider only
  std::string provider = "mock";        // "mock" | "files"
  std::uint64_t encoder_seed = 1;
  ClusterOptions csp;
  PromptTemplateSet templates;
  TrainConfig train;
  RplConfig rpl;
  double smoothing_sigma = 0.0;
  AuproOptions metrics;
};

// Every key is required and unknown keys are rejected. The top-level seed
// overrides the seeds of the csp, train and rpl blocks.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
RunConfig load_run_config(const std::filesystem::path& path);

// Feature root resolution: $STACKAD_FEATURE_ROOT, then the config, then the
// manifest's directory.
std::filesystem::path resolve_feature_root(const RunConfig& cfg);

std::unique_ptr<TextProvider> make_provider(const RunConfig& cfg, int d_txt);

// Output layout under output_root.
struct RunPaths {
  std::filesystem::path root;
  std::filesystem::path cluster_model() const { return root / "cluster" / "cluster_model.json"; }
  std::filesystem::path prompt_list() const { return root / "cluster" / "prompts.txt"; }
  std::filesystem::path heads() const { return root / "train" / "heads.sclp"; }
  std::filesystem::path rpl() const { return root / "train" / "rpl.sclp"; }
  std::filesystem::path efa_loss() const { return root / "train" / "efa_loss.csv"; }
  std::filesystem::path rpl_loss() const { return root / "train" / "rpl_loss.csv"; }
  std::filesystem::path map(const std::string& id) const { return root / "infer" / "maps" / (id + ".sclp"); }
  std::filesystem::path heatmap(const std::string& id) const { return root / "infer" / "heatmaps" / (id + ".png"); }
  std::filesystem::path scores() const { return root / "infer" / "scores.csv"; }
  std::filesystem::path report_json() const { return root / "eval" / "report.json"; }
  std::filesystem::path report_txt() const { return root / "eval" / "report.txt"; }
  std::filesystem::path curves() const { return root / "eval" / "curves.csv"; }
};

DatasetManifest cmd_mock_gen(const std::filesystem::path& spec_path, const std::filesystem::path& out_dir);

// layout: "mvtec" (<cat>/train/good, <cat>/test/<defect>, <cat>/ground_truth/<defect>/<name>_mask.sclp)
// or "flat" (<cat>/<split>/<id>.sclp with labels from the file header and
// optional <id>_mask.sclp siblings).
DatasetManifest cmd_manifest(const std::filesystem::path& raw_dir, const std::string& layout,
                             const std::filesystem::path& out_path);

ClusterModel cmd_cluster(const RunConfig& cfg);

// stage "stacked": prompt list for an existing cluster model;
// stage "precise": one single-class prompt set per train category, which the
// clustering step needs embedded first when features come from files.
std::vector<PromptGroup> cmd_emit_prompts(const RunConfig& cfg, const std::string& stage,
                                          const std::filesystem::path& out_path);

struct TrainSummary {
  int heads = 0;
  int efa_steps = 0;
  int rpl_steps = 0;
  bool rpl_single_class = false;
};

TrainSummary cmd_train(const RunConfig& cfg);

struct InferSummary {
  int images = 0;
  int degenerate_cells = 0;
};

InferSummary cmd_infer(const RunConfig& cfg);

MetricsReport cmd_eval(const RunConfig& cfg);

// Map file: SCLP kind "anomaly_map", tensor "map" of shape [H, W].
void write_map_file(const std::string& image_id, const AnomalyMap& map, const std::vector<double>& weights,
                    const std::filesystem::path& path);
AnomalyMap read_map_file(const std::filesystem::path& path);

}  // namespace stackad
