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

#include <set>
#include <tuple>

#include <gtest/gtest.h>

#include "stackad/error.hpp"
#include "stackad/mock.hpp"
#include "stackad/prompts.hpp"

using namespace stackad;

TEST(Prompts, SingleClass) {
  const std::vector<std::string> cable{"cable"};
  EXPECT_EQ(build_prompt("damaged", cable), "a photo of a damaged cable");
}

TEST(Prompts, StackedClasses) {
  const std::vector<std::string> classes{"cable", "wood", "tile"};
  EXPECT_EQ(build_prompt("damaged", classes), "a photo of a damaged cable wood tile");
  EXPECT_EQ(prompt_key(classes), "cable wood tile");
}

TEST(Prompts, EmptyStateCollapsesSpaces) {
  const std::vector<std::string> capsule{"capsule"};
  EXPECT_EQ(build_prompt("", capsule), "a photo of a capsule");
}

TEST(Prompts, EmptyClassListRejected) {
  EXPECT_THROW(build_prompt("damaged", std::vector<std::string>{}), ValidationError);
}

TEST(Prompts, ClassNamesWithWhitespaceRejected) {
  EXPECT_THROW(validate_class_name("metal nut"), ValidationError);
  EXPECT_THROW(validate_class_name(""), ValidationError);
  EXPECT_NO_THROW(validate_class_name("metal_nut"));
}

TEST(Prompts, InjectiveOverStateAndOrderedClasses) {
  const PromptTemplateSet t;
  std::vector<std::string> states = t.normal_states;
  states.insert(states.end(), t.abnormal_states.begin(), t.abnormal_states.end());
  const std::vector<std::string> names{"cable", "wood", "tile", "pcb-1"};
  std::set<std::string> seen;
  int count = 0;
  // Every ordered list of 1..3 distinct classes, with every state.
  for (std::size_t a = 0; a < names.size(); ++a) {
    for (std::size_t b = 0; b <= names.size(); ++b) {
      for (std::size_t c = 0; c <= names.size(); ++c) {
        std::vector<std::string> cls{names[a]};
        if (b < names.size()) {
          if (b == a) continue;
          cls.push_back(names[b]);
          if (c < names.size()) {
            if (c == a || c == b) continue;
            cls.push_back(names[c]);
          }
        } else if (c < names.size()) {
          continue;
        }
        for (const auto& s : states) {
          seen.insert(build_prompt(s, cls, t));
          ++count;
        }
      }
    }
  }
  EXPECT_EQ(static_cast<int>(seen.size()), count);
}

TEST(Prompts, TemplateValidation) {
  PromptTemplateSet t;
  t.tmpl = "a photo of a [cls]";
  EXPECT_THROW(t.validate(), ValidationError);
  t = PromptTemplateSet{};
  t.abnormal_states.clear();
  EXPECT_THROW(t.validate(), ValidationError);
  const PromptTemplateSet d;
  EXPECT_EQ(d.template_words(), (std::vector<std::string>{"a", "photo", "of", "a"}));
  const auto back = templates_from_json(to_json(d));
  EXPECT_EQ(back.tmpl, d.tmpl);
  EXPECT_EQ(back.normal_states, d.normal_states);
  EXPECT_EQ(back.abnormal_states, d.abnormal_states);
}

TEST(Prompts, StoredProviderNamesMissingKey) {
  StoredTextProvider p({{"cable", {1, 0}, {0, 1}}});
  EXPECT_EQ(p.dim(), 2);
  EXPECT_EQ(p.text_feature("cable", {}).normal, (std::vector<float>{1, 0}));
  try {
    p.text_feature("cable wood", {});
    FAIL();
  } catch (const MissingInputError& e) {
    EXPECT_NE(std::string(e.what()).find("'cable wood'"), std::string::npos);
  }
}

TEST(Prompts, MockEncoderIgnoresTemplateWords) {
  MockTextEncoder enc(3, 16);
  const auto a = enc.embed("a photo of a damaged cable");
  const auto b = enc.embed("damaged cable");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(a[i], b[i]);
  const auto c = enc.embed("damaged wood");
  double diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs(a[i] - c[i]);
  EXPECT_GT(diff, 0.1);
}

TEST(Prompts, MockProviderMatchesEncoder) {
  MockTextProvider p(5, 12);
  const auto a = p.text_feature("cable wood", {});
  const auto b = mock_text_embed("cable wood", 5, 12);
  EXPECT_EQ(a.normal, b.normal);
  EXPECT_EQ(a.abnormal, b.abnormal);
}
