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

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "stackad/feature_store.hpp"

namespace stackad {

// Prompt template with one [state] slot and one [cls] slot, plus the state
// descriptors substituted into it.
struct PromptTemplateSet {
  std::string tmpl = "a photo of a [state] [cls]";
  std::vector<std::string> normal_states{"", "flawless", "perfect"};
  std::vector<std::string> abnormal_states{"damaged", "broken", "with defect"};

  void validate() const;
  // Words of the template outside its slots ("a", "photo", ...).
  std::vector<std::string> template_words() const;
};

nlohmann::json to_json(const PromptTemplateSet& t);
PromptTemplateSet templates_from_json(const nlohmann::json& j);

// Fills the template. Class names are joined by single spaces in the given
// order; runs of whitespace left by an empty state collapse to one space.
std::string build_prompt(std::string_view state, std::span<const std::string> classes,
                         const PromptTemplateSet& templates = {});

// Key under which a prompt's text features are stored: the class list
// joined by spaces.
std::string prompt_key(std::span<const std::string> classes);
std::vector<std::string> split_words(std::string_view text);

// Rejects empty or whitespace-containing class names; such names would make
// prompt keys ambiguous.
void validate_class_name(std::string_view name);

// Supplies normal/abnormal text features for a prompt key. The mock encoder
// and precomputed extractor output both sit behind this boundary.
class TextProvider {
 public:
  virtual ~TextProvider() = default;
  virtual TextFeature text_feature(const std::string& key, const PromptTemplateSet& templates) const = 0;
  virtual int dim() const = 0;
};

// Looks keys up in a loaded text-feature set.
class StoredTextProvider : public TextProvider {
 public:
  explicit StoredTextProvider(std::vector<TextFeature> texts);
  TextFeature text_feature(const std::string& key, const PromptTemplateSet& templates) const override;
  int dim() const override { return dim_; }

 private:
  std::map<std::string, TextFeature> texts_;
  int dim_ = 0;
};

}  // namespace stackad
