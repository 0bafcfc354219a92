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

#include "stackad/prompts.hpp"

#include <cctype>

#include "stackad/error.hpp"

namespace stackad {

namespace {

constexpr std::string_view kStateSlot = "[state]";
constexpr std::string_view kClassSlot = "[cls]";

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + 1)) {
    ++n;
  }
  return n;
}

void replace_once(std::string& text, std::string_view slot, std::string_view value) {
  const auto pos = text.find(slot);
  text.replace(pos, slot.size(), value);
}

std::string collapse_spaces(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

}  // namespace

void PromptTemplateSet::validate() const {
  if (count_occurrences(tmpl, kStateSlot) != 1 || count_occurrences(tmpl, kClassSlot) != 1) {
    throw ValidationError("template must contain [state] and [cls] exactly once: '" + tmpl + "'");
  }
  if (normal_states.empty() || abnormal_states.empty()) {
    throw ValidationError("state descriptor lists must be non-empty");
  }
}

std::vector<std::string> PromptTemplateSet::template_words() const {
  std::string stripped = tmpl;
  replace_once(stripped, kStateSlot, " ");
  replace_once(stripped, kClassSlot, " ");
  return split_words(stripped);
}

nlohmann::json to_json(const PromptTemplateSet& t) {
  return {{"template", t.tmpl}, {"normal_states", t.normal_states}, {"abnormal_states", t.abnormal_states}};
}

PromptTemplateSet templates_from_json(const nlohmann::json& j) {
  PromptTemplateSet t;
  t.tmpl = j.at("template").get<std::string>();
  t.normal_states = j.at("normal_states").get<std::vector<std::string>>();
  t.abnormal_states = j.at("abnormal_states").get<std::vector<std::string>>();
  t.validate();
  return t;
}

std::string prompt_key(std::span<const std::string> classes) {
  std::string key;
  for (const auto& c : classes) {
    if (!key.empty()) key.push_back(' ');
    key += c;
  }
  return key;
}

std::string build_prompt(std::string_view state, std::span<const std::string> classes,
                         const PromptTemplateSet& templates) {
  if (classes.empty()) throw ValidationError("build_prompt: empty class list");
  std::string text = templates.tmpl;
  // Class slot first so a state containing "[cls]" is never re-expanded.
  replace_once(text, kClassSlot, prompt_key(classes));
  replace_once(text, kStateSlot, state);
  return collapse_spaces(text);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

void validate_class_name(std::string_view name) {
  if (name.empty()) throw ValidationError("empty class name");
  for (char c : name) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      throw ValidationError("class name contains whitespace: '" + std::string(name) + "'");
    }
  }
}

StoredTextProvider::StoredTextProvider(std::vector<TextFeature> texts) {
  if (!texts.empty()) dim_ = static_cast<int>(texts.front().normal.size());
  texts_ = index_by_key(std::move(texts));
}

TextFeature StoredTextProvider::text_feature(const std::string& key, const PromptTemplateSet&) const {
  auto it = texts_.find(key);
  if (it == texts_.end()) throw MissingInputError("no text embedding for prompt key '" + key + "'");
  return it->second;
}

}  // namespace stackad
