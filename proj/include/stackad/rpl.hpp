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
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stackad/adam.hpp"
#include "stackad/feature_store.hpp"

namespace stackad {

// Learnable normal/abnormal embedding pair for image-level scoring, pulled
// toward a frozen reference pair by a squared-error term.

struct LearnablePromptPair {
  std::vector<double> normal;
  std::vector<double> abnormal;
  TextFeature reference;

  int dim() const { return static_cast<int>(normal.size()); }
};

// t' = t^s + N(0, noise_scale^2) per coordinate.
LearnablePromptPair init_prompts(const TextFeature& reference, std::uint64_t seed, double noise_scale = 0.02);

// Probability that `cls` is anomalous. A zero CLS scores 0.5 and sets `degenerate`.
double classify(std::span<const float> cls, const LearnablePromptPair& pair, double logit_scale,
                bool* degenerate = nullptr);

inline double image_score(std::span<const float> cls, const LearnablePromptPair& pair, double logit_scale,
                          bool* degenerate = nullptr) {
  return classify(cls, pair, logit_scale, degenerate);
}

std::vector<double> image_scores(std::span<const std::vector<float>> cls, const LearnablePromptPair& pair,
                                 double logit_scale);

struct RplLoss {
  double l_ce = 0.0;
  double l_text_normal = 0.0;    // (1/d) sum (t'_n - t^s_n)^2
  double l_text_abnormal = 0.0;  // (1/d) sum (t'_a - t^s_a)^2
  double l_text = 0.0;           // mean of the two channels
  double l_cls = 0.0;            // l_ce + text_weight * l_text
};

RplLoss rpl_loss(double p, int y, const LearnablePromptPair& pair, double text_weight = 1.0);

struct RplConfig {
  double logit_scale = 100.0;
  double lr = 1e-4;
  int epochs = 2;
  int batch_size = 16;
  double noise_scale = 0.02;
  double text_weight = 1.0;
  AdamConfig adam;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const RplConfig& cfg);
RplConfig rpl_config_from_json(const nlohmann::json& j);

struct RplLossGrad {
  double loss = 0.0;  // batch-mean l_ce + text_weight * l_text
  std::vector<double> d_normal;
  std::vector<double> d_abnormal;
};

RplLossGrad rpl_loss_and_grad(const LearnablePromptPair& pair, std::span<const std::vector<float>> cls,
                              std::span<const int> labels, const RplConfig& cfg);

struct RplRecord {
  int epoch = 0;
  int step = 0;
  double loss = 0.0;
};

struct RplResult {
  LearnablePromptPair pair;
  std::vector<RplRecord> curve;
  bool single_class = false;
};

RplResult train_rpl(std::span<const std::vector<float>> cls, std::span<const int> labels,
                    const TextFeature& reference, const RplConfig& cfg);

void save_rpl(const LearnablePromptPair& pair, const nlohmann::json& meta, const std::filesystem::path& path);
LearnablePromptPair load_rpl(const std::filesystem::path& path);

void write_rpl_loss_csv(const std::vector<RplRecord>& curve, const std::filesystem::path& path);

struct ScoreRow {
  std::string image_id;
  double score = 0.0;
  int label = 0;
};

void write_scores_csv(const std::vector<ScoreRow>& rows, const std::filesystem::path& path);
std::vector<ScoreRow> read_scores_csv(const std::filesystem::path& path);

}  // namespace stackad
