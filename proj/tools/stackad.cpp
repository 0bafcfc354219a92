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

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "stackad/error.hpp"
#include "stackad/pipeline.hpp"

namespace {

using nlohmann::json;
using namespace stackad;

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> provider;
  std::optional<std::uint64_t> encoder_seed;
  std::optional<std::string> manifest;
  std::optional<std::string> feature_root;
  std::optional<std::string> output_root;
  std::optional<std::string> text_features;
};

void add_config_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("-c,--config", o.config, "Run configuration (JSON)")->required();
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--provider", o.provider, "Feature provider")->check(CLI::IsMember({"mock", "files"}));
  cmd->add_option("--encoder-seed", o.encoder_seed, "Override the mock encoder seed");
  cmd->add_option("--manifest", o.manifest, "Override paths.manifest");
  cmd->add_option("--feature-root", o.feature_root, "Override paths.feature_root");
  cmd->add_option("--output-root", o.output_root, "Override paths.output_root");
  cmd->add_option("--text-features", o.text_features, "Override paths.text_features");
}

RunConfig resolve_config(const Overrides& o) {
  std::ifstream in(o.config);
  if (!in) throw MissingInputError("config not found: '" + o.config + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + o.config + "': " + e.what());
  }
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  auto set = [&](const char* block, const char* key, const auto& value) {
    if (value) {
      if (!j.contains(block) || !j[block].is_object()) throw ValidationError(std::string("config: missing field '") + block + "'");
      j[block][key] = *value;
    }
  };
  if (o.seed) j["seed"] = *o.seed;
  set("provider", "kind", o.provider);
  set("provider", "encoder_seed", o.encoder_seed);
  set("paths", "manifest", o.manifest);
  set("paths", "feature_root", o.feature_root);
  set("paths", "output_root", o.output_root);
  set("paths", "text_features", o.text_features);
  return run_config_from_json(j);
}

void print_report(const MetricsReport& report) { std::cout << report_table(report); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-shot anomaly segmentation with clustered stacked prompts"};
  app.require_subcommand(1);

  std::string spec_path;
  std::string out_dir;
  auto* mock = app.add_subcommand("mock-gen", "Generate the deterministic synthetic feature dataset");
  mock->add_option("--spec", spec_path, "Mock dataset spec (JSON)")->required();
  mock->add_option("--out", out_dir, "Output directory")->required();

  std::string raw_dir;
  std::string layout = "flat";
  std::string manifest_out;
  auto* manifest = app.add_subcommand("manifest", "Build a dataset manifest from a feature tree");
  manifest->add_option("--input", raw_dir, "Feature tree root")->required();
  manifest->add_option("--layout", layout, "Directory layout")->check(CLI::IsMember({"mvtec", "flat"}));
  manifest->add_option("--out", manifest_out, "Manifest path")->required();

  Overrides o;
  auto* cluster = app.add_subcommand("cluster", "Cluster categories and write the prompt list");
  add_config_options(cluster, o);

  std::string stage = "stacked";
  std::string prompts_out;
  auto* emit = app.add_subcommand("emit-prompts", "Write the prompt list for the extractor");
  add_config_options(emit, o);
  emit->add_option("--stage", stage, "precise | stacked")->check(CLI::IsMember({"precise", "stacked"}));
  emit->add_option("--out", prompts_out, "Prompt list path");

  auto* train = app.add_subcommand("train", "Train alignment heads and the prompt pair");
  add_config_options(train, o);
  auto* inferc = app.add_subcommand("infer", "Write anomaly maps, heatmaps and image scores");
  add_config_options(inferc, o);
  auto* eval = app.add_subcommand("eval", "Compute the metrics report");
  add_config_options(eval, o);
  auto* run = app.add_subcommand("run", "cluster, train, infer and eval in sequence");
  add_config_options(run, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ExitCode::kValidation);
  }

  try {
    if (mock->parsed()) {
      const auto m = cmd_mock_gen(spec_path, out_dir);
      std::cout << "wrote " << m.entries.size() << " images to " << out_dir << '\n';
    } else if (manifest->parsed()) {
      const auto m = cmd_manifest(raw_dir, layout, manifest_out);
      std::cout << "manifest: " << m.entries.size() << " entries -> " << manifest_out << '\n';
    } else if (emit->parsed()) {
      const auto groups = cmd_emit_prompts(resolve_config(o), stage, prompts_out);
      std::cout << "prompt groups: " << groups.size() << '\n';
    } else {
      const RunConfig cfg = resolve_config(o);
      if (cluster->parsed() || run->parsed()) {
        const auto model = cmd_cluster(cfg);
        std::cout << "clusters: " << model.n_star << '\n';
        for (int c = 0; c < model.n_star; ++c) std::cout << "  " << c << ": " << model.stacked_prompt_keys[c] << '\n';
      }
      if (train->parsed() || run->parsed()) {
        const auto s = cmd_train(cfg);
        std::cout << "trained " << s.heads << " heads (" << s.efa_steps << " steps), prompt pair (" << s.rpl_steps
                  << " steps)\n";
      }
      if (inferc->parsed() || run->parsed()) {
        const auto s = cmd_infer(cfg);
        std::cout << "inferred " << s.images << " images";
        if (s.degenerate_cells > 0) std::cout << " (" << s.degenerate_cells << " degenerate cells)";
        std::cout << '\n';
      }
      if (eval->parsed() || run->parsed()) print_report(cmd_eval(cfg));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kValidation);
  }
  return 0;
}
