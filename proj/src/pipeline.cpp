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

#include "stackad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>

#include "stackad/error.hpp"
#include "stackad/heatmap.hpp"
#include "stackad/mock.hpp"

namespace stackad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ValidationError("config: '" + where + "' must be an object");
  std::set<std::string> expected(keys.begin(), keys.end());
  for (const auto& k : expected) {
    if (!j.contains(k)) throw ValidationError("config: missing field '" + where + "." + k + "'");
  }
  for (const auto& [k, v] : j.items()) {
    if (!expected.count(k)) throw ValidationError("config: unknown field '" + where + "." + k + "'");
  }
}

json with_seed(json block, std::uint64_t seed) {
  block["seed"] = seed;
  return block;
}

json without_seed(json block) {
  block.erase("seed");
  return block;
}

DatasetManifest load_checked_manifest(const RunConfig& cfg, fs::path* root) {
  if (!fs::exists(cfg.manifest)) throw MissingInputError("manifest not found: '" + cfg.manifest.string() + "'");
  auto manifest = load_manifest(cfg.manifest);
  *root = resolve_feature_root(cfg);
  validate_manifest(manifest, *root);
  return manifest;
}

std::vector<std::string> checked_categories(const DatasetManifest& manifest, Split split) {
  auto cats = manifest.categories(split);
  if (cats.empty()) throw ValidationError("manifest has no " + to_string(split) + " categories");
  for (const auto& c : cats) validate_class_name(c);
  return cats;
}

void check_finite(const std::vector<double>& v, const std::string& what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError("NaN detected in " + what);
  }
}

}  // namespace

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    require_keys(j, {"seed", "paths", "provider", "csp", "train", "rpl", "infer", "metrics"}, "config");
    c.seed = j.at("seed").get<std::uint64_t>();

    const auto& p = j.at("paths");
    require_keys(p, {"manifest", "feature_root", "output_root", "text_features"}, "paths");
    c.manifest = p.at("manifest").get<std::string>();
    c.feature_root = p.at("feature_root").get<std::string>();
    c.output_root = p.at("output_root").get<std::string>();
    c.text_features = p.at("text_features").get<std::string>();
    if (c.manifest.empty() || c.output_root.empty()) {
      throw ValidationError("config: paths.manifest and paths.output_root must be non-empty");
    }

    const auto& pr = j.at("provider");
    require_keys(pr, {"kind", "encoder_seed"}, "provider");
    c.provider = pr.at("kind").get<std::string>();
    c.encoder_seed = pr.at("encoder_seed").get<std::uint64_t>();
    if (c.provider != "mock" && c.provider != "files") {
      throw ValidationError("config: provider.kind must be 'mock' or 'files'");
    }
    if (c.provider == "files" && c.text_features.empty()) {
      throw ValidationError("config: the files provider needs paths.text_features");
    }

    const auto& csp = j.at("csp");
    require_keys(csp, {"k_max", "lambda_coeff", "lambda_base", "restarts", "templates"}, "csp");
    c.csp.k_max = csp.at("k_max").get<int>();
    c.csp.lambda_coeff = csp.at("lambda_coeff").get<double>();
    c.csp.lambda_base = csp.at("lambda_base").get<double>();
    c.csp.restarts = csp.at("restarts").get<int>();
    c.csp.seed = c.seed;
    if (c.csp.k_max < 1 || c.csp.restarts < 1) throw ValidationError("config: csp.k_max and csp.restarts must be >= 1");
    require_keys(csp.at("templates"), {"template", "normal_states", "abnormal_states"}, "csp.templates");
    c.templates = templates_from_json(csp.at("templates"));

    require_keys(j.at("train"),
                 {"alpha", "gamma", "epsilon", "logit_scale", "lr", "epochs", "batch_size", "adam", "layers"}, "train");
    c.train = train_config_from_json(with_seed(j.at("train"), c.seed));
    require_keys(j.at("rpl"), {"logit_scale", "lr", "epochs", "batch_size", "noise_scale", "text_weight", "adam"},
                 "rpl");
    c.rpl = rpl_config_from_json(with_seed(j.at("rpl"), c.seed));

    const auto& inf = j.at("infer");
    require_keys(inf, {"smoothing_sigma"}, "infer");
    c.smoothing_sigma = inf.at("smoothing_sigma").get<double>();

    const auto& m = j.at("metrics");
    require_keys(m, {"fpr_cap", "steps"}, "metrics");
    c.metrics.fpr_cap = m.at("fpr_cap").get<double>();
    c.metrics.steps = m.at("steps").get<int>();
    if (!(c.metrics.fpr_cap > 0.0 && c.metrics.fpr_cap <= 1.0) || c.metrics.steps < 2) {
      throw ValidationError("config: metrics.fpr_cap must be in (0, 1] and metrics.steps >= 2");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  return c;
}

json to_json(const RunConfig& c) {
  return {{"seed", c.seed},
          {"paths",
           {{"manifest", c.manifest.string()},
            {"feature_root", c.feature_root.string()},
            {"output_root", c.output_root.string()},
            {"text_features", c.text_features.string()}}},
          {"provider", {{"kind", c.provider}, {"encoder_seed", c.encoder_seed}}},
          {"csp",
           {{"k_max", c.csp.k_max},
            {"lambda_coeff", c.csp.lambda_coeff},
            {"lambda_base", c.csp.lambda_base},
            {"restarts", c.csp.restarts},
            {"templates", to_json(c.templates)}}},
          {"train", without_seed(to_json(c.train))},
          {"rpl", without_seed(to_json(c.rpl))},
          {"infer", {{"smoothing_sigma", c.smoothing_sigma}}},
          {"metrics", {{"fpr_cap", c.metrics.fpr_cap}, {"steps", c.metrics.steps}}}};
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("config not found: '" + path.string() + "'");
  try {
    return run_config_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError("config '" + path.string() + "': " + e.what());
  }
}

fs::path resolve_feature_root(const RunConfig& cfg) {
  if (const char* env = std::getenv("STACKAD_FEATURE_ROOT"); env != nullptr && *env != '\0') return fs::path(env);
  if (!cfg.feature_root.empty()) return cfg.feature_root;
  return feature_root_for(cfg.manifest);
}

std::unique_ptr<TextProvider> make_provider(const RunConfig& cfg, int d_txt) {
  if (cfg.provider == "mock") return std::make_unique<MockTextProvider>(cfg.encoder_seed, d_txt);
  if (!fs::exists(cfg.text_features)) {
    throw MissingInputError("text feature file not found: '" + cfg.text_features.string() + "'");
  }
  auto provider = std::make_unique<StoredTextProvider>(read_text_features(cfg.text_features));
  if (provider->dim() != d_txt) {
    throw ValidationError("text features have dim " + std::to_string(provider->dim()) + ", manifest says " +
                          std::to_string(d_txt));
  }
  return provider;
}

// ---------------------------------------------------------------------------

DatasetManifest cmd_mock_gen(const fs::path& spec_path, const fs::path& out_dir) {
  std::ifstream in(spec_path);
  if (!in) throw MissingInputError("mock spec not found: '" + spec_path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("mock spec '" + spec_path.string() + "': " + e.what());
  }
  return generate_mock_dataset(mock_spec_from_json(j), out_dir);
}

namespace {

std::vector<fs::path> sorted_children(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

bool is_mask_file(const fs::path& p) {
  const auto stem = p.stem().string();
  return stem.size() > 5 && stem.compare(stem.size() - 5, 5, "_mask") == 0;
}

Dims dims_from_header(const fs::path& path) {
  const auto header = read_sclp_header(path);
  const auto& meta = header.at("meta");
  return Dims{meta.at("d_img").get<int>(), meta.at("d_txt").get<int>(), meta.at("grid").get<int>(),
              meta.at("height").get<int>(), meta.at("width").get<int>()};
}

}  // namespace

DatasetManifest cmd_manifest(const fs::path& raw_dir, const std::string& layout, const fs::path& out_path) {
  if (layout != "mvtec" && layout != "flat") throw ValidationError("unknown layout '" + layout + "'");
  if (!fs::is_directory(raw_dir)) throw MissingInputError("dataset directory not found: '" + raw_dir.string() + "'");
  const fs::path base = out_path.has_parent_path() ? out_path.parent_path() : fs::path(".");
  fs::create_directories(base);
  auto rel = [&](const fs::path& p) { return fs::relative(p, base).generic_string(); };

  DatasetManifest manifest;
  bool have_dims = false;
  auto add = [&](ManifestEntry e, const fs::path& feature) {
    if (!have_dims) {
      manifest.dims = dims_from_header(feature);
      have_dims = true;
    }
    if (e.label == Label::kAnomalous && !e.mask_path && e.split == Split::kTrain) {
      throw MissingInputError("anomalous train image '" + e.image_id + "' has no mask");
    }
    manifest.entries.push_back(std::move(e));
  };

  const auto categories = sorted_children(raw_dir, true);
  for (const auto& cat_dir : categories) {
    const std::string category = cat_dir.filename().string();
    if (layout == "flat") {
      for (Split split : {Split::kTrain, Split::kTest}) {
        for (const auto& f : sorted_children(cat_dir / to_string(split), false)) {
          if (f.extension() != ".sclp" || is_mask_file(f)) continue;
          const auto header = read_sclp_header(f);
          ManifestEntry e;
          e.image_id = f.stem().string();
          e.category = category;
          e.split = split;
          e.feature_path = rel(f);
          e.label = parse_label(header.at("meta").at("label").get<std::string>());
          const fs::path mask = f.parent_path() / (e.image_id + "_mask.sclp");
          if (fs::exists(mask)) e.mask_path = rel(mask);
          add(std::move(e), f);
        }
      }
    } else {
      for (Split split : {Split::kTrain, Split::kTest}) {
        for (const auto& defect_dir : sorted_children(cat_dir / to_string(split), true)) {
          const std::string defect = defect_dir.filename().string();
          for (const auto& f : sorted_children(defect_dir, false)) {
            if (f.extension() != ".sclp") continue;
            ManifestEntry e;
            e.image_id = category + "_" + to_string(split) + "_" + defect + "_" + f.stem().string();
            e.category = category;
            e.split = split;
            e.feature_path = rel(f);
            e.label = defect == "good" ? Label::kNormal : Label::kAnomalous;
            const fs::path mask = cat_dir / "ground_truth" / defect / (f.stem().string() + "_mask.sclp");
            if (e.label == Label::kAnomalous && fs::exists(mask)) e.mask_path = rel(mask);
            add(std::move(e), f);
          }
        }
      }
    }
  }
  if (manifest.entries.empty()) throw ValidationError("no categories");
  std::sort(manifest.entries.begin(), manifest.entries.end(), [](const auto& a, const auto& b) {
    return std::tie(a.category, a.split, a.image_id) < std::tie(b.category, b.split, b.image_id);
  });
  save_manifest(manifest, out_path);
  return manifest;
}

namespace {

std::vector<PromptGroup> full_prompt_list(const ClusterModel& model, const std::vector<std::string>& reference,
                                          const std::vector<std::string>& test_categories,
                                          const PromptTemplateSet& templates) {
  std::vector<PromptGroup> groups = stacked_prompts(model, templates);
  groups.push_back(prompts_for_classes(0, reference, templates));
  for (const auto& t : test_categories) {
    for (auto& g : build_test_prompts(t, model, templates)) groups.push_back(std::move(g));
  }
  std::set<std::string> seen;
  std::vector<PromptGroup> unique;
  for (auto& g : groups) {
    if (seen.insert(g.key).second) unique.push_back(std::move(g));
  }
  return unique;
}

struct CspContext {
  std::vector<std::string> train_categories;
  std::vector<std::string> test_categories;
  Matrix points;
};

CspContext csp_context(const RunConfig& cfg, const DatasetManifest& manifest, const TextProvider& provider) {
  CspContext ctx;
  ctx.train_categories = checked_categories(manifest, Split::kTrain);
  ctx.test_categories = manifest.categories(Split::kTest);
  for (const auto& c : ctx.test_categories) validate_class_name(c);
  ctx.points = category_text_features(ctx.train_categories, provider, cfg.templates);
  return ctx;
}

}  // namespace

ClusterModel cmd_cluster(const RunConfig& cfg) {
  fs::path root;
  const auto manifest = load_checked_manifest(cfg, &root);
  const auto provider = make_provider(cfg, manifest.dims.d_txt);
  const auto ctx = csp_context(cfg, manifest, *provider);
  ClusterOptions options = cfg.csp;
  options.k_max = std::min<int>(options.k_max, static_cast<int>(ctx.train_categories.size()));
  const auto model = select_clusters(ctx.points, ctx.train_categories, options);
  const RunPaths paths{cfg.output_root};
  save_cluster_model(model, paths.cluster_model());
  write_prompt_list(full_prompt_list(model, single_cluster_members(ctx.points, ctx.train_categories),
                                     ctx.test_categories, cfg.templates),
                    paths.prompt_list());
  return model;
}

std::vector<PromptGroup> cmd_emit_prompts(const RunConfig& cfg, const std::string& stage, const fs::path& out_path) {
  if (stage != "precise" && stage != "stacked") throw ValidationError("unknown prompt stage '" + stage + "'");
  fs::path root;
  const auto manifest = load_checked_manifest(cfg, &root);
  std::vector<PromptGroup> groups;
  if (stage == "precise") {
    int i = 0;
    for (const auto& c : checked_categories(manifest, Split::kTrain)) {
      groups.push_back(prompts_for_classes(i++, {c}, cfg.templates));
    }
  } else {
    const RunPaths paths{cfg.output_root};
    const auto model = load_cluster_model(paths.cluster_model());
    const auto provider = make_provider(cfg, manifest.dims.d_txt);
    const auto ctx = csp_context(cfg, manifest, *provider);
    groups = full_prompt_list(model, single_cluster_members(ctx.points, ctx.train_categories), ctx.test_categories,
                              cfg.templates);
  }
  write_prompt_list(groups, out_path.empty() ? RunPaths{cfg.output_root}.prompt_list() : out_path);
  return groups;
}

TrainSummary cmd_train(const RunConfig& cfg) {
  fs::path root;
  const auto manifest = load_checked_manifest(cfg, &root);
  const RunPaths paths{cfg.output_root};
  const auto model = load_cluster_model(paths.cluster_model());
  const auto provider = make_provider(cfg, manifest.dims.d_txt);

  std::map<std::string, TextFeature> texts;
  for (const auto& key : model.stacked_prompt_keys) texts[key] = provider->text_feature(key, cfg.templates);
  const auto ctx = csp_context(cfg, manifest, *provider);
  const auto reference_key = prompt_key(single_cluster_members(ctx.points, ctx.train_categories));
  const TextFeature reference = provider->text_feature(reference_key, cfg.templates);

  std::vector<FeatureBundle> images;
  for (const auto* e : manifest.split(Split::kTrain)) images.push_back(load_entry(*e, root));

  const auto efa = train_heads(images, model, texts, cfg.train);
  for (const auto& r : efa.curve) {
    if (!std::isfinite(r.loss)) throw NumericError("NaN detected in alignment-head loss");
  }
  save_head_bank(efa.bank, paths.heads());
  write_loss_csv(efa.curve, paths.efa_loss());

  std::vector<std::vector<float>> cls;
  std::vector<int> labels;
  for (const auto& img : images) {
    cls.push_back(img.cls);
    labels.push_back(img.label == Label::kAnomalous ? 1 : 0);
  }
  const auto rpl = train_rpl(cls, labels, reference, cfg.rpl);
  if (rpl.single_class) std::cerr << "warning: prompt training set has a single class\n";
  save_rpl(rpl.pair, {{"cluster_model_sha256", efa.bank.cluster_model_sha256}, {"rpl_config", to_json(cfg.rpl)}},
           paths.rpl());
  write_rpl_loss_csv(rpl.curve, paths.rpl_loss());

  TrainSummary s;
  s.heads = static_cast<int>(efa.bank.heads.size());
  s.efa_steps = static_cast<int>(efa.curve.size());
  s.rpl_steps = static_cast<int>(rpl.curve.size());
  s.rpl_single_class = rpl.single_class;
  return s;
}

void write_map_file(const std::string& image_id, const AnomalyMap& map, const std::vector<double>& weights,
                    const fs::path& path) {
  SclpDocument doc;
  doc.kind = "anomaly_map";
  doc.ids = {image_id};
  doc.meta = {{"image_id", image_id}, {"height", map.rows}, {"width", map.cols}, {"weights", weights}};
  doc.tensors.push_back({"map", {map.rows, map.cols}, "f32le", to_float(map.values), {}});
  write_sclp(doc, path);
}

AnomalyMap read_map_file(const fs::path& path) {
  if (!fs::exists(path)) throw MissingInputError("map file missing: '" + path.string() + "'");
  const auto doc = read_sclp(path);
  if (doc.kind != "anomaly_map") throw CodecError(path.string() + ": expected kind 'anomaly_map'");
  const auto& t = doc.tensor("map");
  if (t.shape.size() != 2) throw CodecError(path.string() + ": map tensor must be 2-D");
  return AnomalyMap{static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), to_double(t.f32)};
}

InferSummary cmd_infer(const RunConfig& cfg) {
  fs::path root;
  const auto manifest = load_checked_manifest(cfg, &root);
  const RunPaths paths{cfg.output_root};
  const auto model = load_cluster_model(paths.cluster_model());
  if (!fs::exists(paths.heads())) throw MissingInputError("head bank not found: '" + paths.heads().string() + "'");
  if (!fs::exists(paths.rpl())) throw MissingInputError("prompt pair not found: '" + paths.rpl().string() + "'");
  const auto bank = load_head_bank(paths.heads());
  const auto pair = load_rpl(paths.rpl());
  if (bank.cluster_model_sha256 != cluster_model_digest(model) || bank.n_clusters != model.n_star) {
    throw ValidationError("artifact mismatch: head bank was trained against a different cluster model");
  }
  if (pair.dim() != manifest.dims.d_txt) throw ValidationError("artifact mismatch: prompt pair dim");
  const auto provider = make_provider(cfg, manifest.dims.d_txt);

  InferConfig icfg;
  icfg.logit_scale = cfg.train.logit_scale;
  icfg.layers = bank.layers;
  icfg.smoothing_sigma = cfg.smoothing_sigma;

  std::map<std::string, std::vector<TextFeature>> test_texts;
  std::vector<ScoreRow> rows;
  InferSummary summary;
  for (const auto* e : manifest.split(Split::kTest)) {
    auto it = test_texts.find(e->category);
    if (it == test_texts.end()) {
      std::vector<TextFeature> t;
      for (const auto& g : build_test_prompts(e->category, model, cfg.templates)) {
        t.push_back(provider->text_feature(g.key, cfg.templates));
      }
      it = test_texts.emplace(e->category, std::move(t)).first;
    }
    const auto bundle = read_bundle(root / e->feature_path);
    const auto result = infer(bundle, bank, it->second, icfg);
    check_finite(result.final_map.values, "anomaly map of '" + e->image_id + "'");
    bool zero_cls = false;
    const double score = image_score(bundle.cls, pair, cfg.rpl.logit_scale, &zero_cls);
    if (!std::isfinite(score)) throw NumericError("NaN detected in image score of '" + e->image_id + "'");
    write_map_file(e->image_id, result.final_map, result.weights, paths.map(e->image_id));
    write_png(quantize(result.final_map.values, result.final_map.rows, result.final_map.cols),
              paths.heatmap(e->image_id));
    rows.push_back({e->image_id, score, e->label == Label::kAnomalous ? 1 : 0});
    summary.degenerate_cells += result.degenerate + (zero_cls ? 1 : 0);
    ++summary.images;
  }
  if (rows.empty()) throw ValidationError("manifest has no test images");
  write_scores_csv(rows, paths.scores());
  return summary;
}

MetricsReport cmd_eval(const RunConfig& cfg) {
  fs::path root;
  const auto manifest = load_checked_manifest(cfg, &root);
  const RunPaths paths{cfg.output_root};
  const auto rows = read_scores_csv(paths.scores());
  std::map<std::string, double> score_of;
  for (const auto& r : rows) score_of[r.image_id] = r.score;

  std::vector<ScoreMap> maps;
  std::vector<std::vector<std::uint8_t>> gts;
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (const auto* e : manifest.split(Split::kTest)) {
    auto it = score_of.find(e->image_id);
    if (it == score_of.end()) throw MissingInputError("no score for test image '" + e->image_id + "'");
    const auto map = read_map_file(paths.map(e->image_id));
    std::vector<std::uint8_t> gt;
    if (e->mask_path) {
      const auto mask = read_mask(root / *e->mask_path);
      if (mask.height != map.rows || mask.width != map.cols) {
        throw ValidationError("mask of '" + e->image_id + "' does not match its map size");
      }
      gt = mask.values;
    } else {
      gt.assign(map.values.size(), 0);
    }
    maps.push_back({map.rows, map.cols, map.values});
    gts.push_back(std::move(gt));
    scores.push_back(it->second);
    labels.push_back(e->label == Label::kAnomalous ? 1 : 0);
  }
  if (maps.empty()) throw ValidationError("manifest has no test images");
  const auto report = evaluate_run(maps, gts, scores, labels, cfg.metrics);
  fs::create_directories(paths.report_json().parent_path());
  {
    std::ofstream out(paths.report_json(), std::ios::trunc);
    out << report_to_json(report).dump(2) << '\n';
  }
  {
    std::ofstream out(paths.report_txt(), std::ios::trunc);
    out << report_table(report);
  }
  write_curves_csv(report, paths.curves());
  return report;
}

}  // namespace stackad
