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
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stackad/feature_store.hpp"
#include "stackad/prompts.hpp"

namespace stackad {

// Deterministic stand-in for a frozen text encoder.
//
// Words are hashed (with the seed) to Gaussian directions. Template words are
// ignored, state words live in the first quarter of the coordinates, class
// words in the rest. A class word contributes its alphabetic stem strongly and
// the full word weakly, so "pcb-1" and "pcb-2" land close together. A prompt
// embeds as normalize(unit(class part) + state_weight * unit(state part)).
class MockTextEncoder {
 public:
  MockTextEncoder(std::uint64_t seed, int dim, PromptTemplateSet templates = {});

  std::vector<double> embed(std::string_view prompt) const;
  // Normal/abnormal pair for a key: each channel is the normalized mean of
  // the embedded state prompts.
  TextFeature text_feature(const std::string& key) const;

  int dim() const { return dim_; }
  int state_dims() const { return state_dims_; }
  const PromptTemplateSet& templates() const { return templates_; }

  static constexpr double kStemWeight = 1.0;
  static constexpr double kWordWeight = 0.3;
  static constexpr double kStateWeight = 0.5;

 private:
  std::vector<double> word_direction(std::string_view domain, std::string_view word, int begin,
                                     int end) const;

  std::uint64_t seed_;
  int dim_;
  int state_dims_;
  PromptTemplateSet templates_;
  std::vector<std::string> template_words_;
  std::vector<std::string> state_words_;
};

// mock_text_embed(prompt key, seed): normal/abnormal pair under the default
// templates.
TextFeature mock_text_embed(const std::string& key, std::uint64_t seed, int dim,
                            const PromptTemplateSet& templates = {});

class MockTextProvider : public TextProvider {
 public:
  MockTextProvider(std::uint64_t seed, int dim) : seed_(seed), dim_(dim) {}
  TextFeature text_feature(const std::string& key, const PromptTemplateSet& templates) const override;
  int dim() const override { return dim_; }

 private:
  std::uint64_t seed_;
  int dim_;
};

// Alphabetic prefix of a class word; "pcb-1" -> "pcb", "metal_nut" -> "metal".
std::string class_stem(std::string_view word);

struct MockCategory {
  std::string name;
  std::string group;
  int train_images = 0;
  int test_images = 0;
};

struct MockDatasetSpec {
  std::vector<MockCategory> categories;
  double anomaly_fraction = 0.5;
  int grid = 8;
  int d_img = 16;
  int d_txt = 8;
  int height = 32;
  int width = 32;
  std::uint64_t seed = 0;
  // Seed of the mock text encoder; the run config's mock provider must use
  // the same value for text and image features to agree.
  std::uint64_t encoder_seed = 1;
  // Per-coordinate std of the text-space patch noise and of the nuisance
  // coordinates that pad the text space up to d_img.
  double patch_noise = 0.05;
  double nuisance_scale = 0.3;
  // Side range of the rectangular defect, in grid cells; 0 selects
  // max(1, grid/4) and grid/2.
  int defect_min = 0;
  int defect_max = 0;
  PromptTemplateSet templates;

  void validate() const;
};

nlohmann::json to_json(const MockDatasetSpec& spec);
MockDatasetSpec mock_spec_from_json(const nlohmann::json& j);

// Writes <out>/<category>/<split>/<image_id>.sclp (+ _mask.sclp for anomalous
// images) and <out>/manifest.json. Normal patches sit on the category's
// normal-text direction, patches inside the rectangular defect on its
// abnormal-text direction; each layer sees the padded vector through its own
// fixed random rotation. CLS is the mean of the text-space patch vectors.
DatasetManifest generate_mock_dataset(const MockDatasetSpec& spec, const std::filesystem::path& out_dir);

// Seeded 64-bit string hash (FNV-1a mixed through splitmix64).
std::uint64_t seeded_hash(std::uint64_t seed, std::string_view text);
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace stackad
