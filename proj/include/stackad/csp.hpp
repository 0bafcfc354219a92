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
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "stackad/matrix.hpp"
#include "stackad/prompts.hpp"

namespace stackad {

// Category clustering and stacked-prompt construction.

// Row i = normalize(normal channel of category i's precise prompt set). With
// the stored provider this is the extractor's mean over normal-state prompts.
Matrix category_text_features(const std::vector<std::string>& categories, const TextProvider& provider,
                              const PromptTemplateSet& templates);

struct KMeansResult {
  std::vector<int> assignment;
  Matrix centroids;
  double inertia = 0.0;
  int iterations = 0;
};

inline constexpr int kKMeansMaxIterations = 100;

// k-means++ seeding, Lloyd iterations to an assignment fixpoint (capped at
// kKMeansMaxIterations), best of `restarts` by inertia. Restart r draws from
// mix_seed(seed, r), so the result does not depend on thread scheduling.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts);

// Single restart; exposed for tests.
KMeansResult kmeans_single(const Matrix& points, int k, std::uint64_t seed);

// Sum over clusters of the mean squared distance to the cluster centroid,
// plus lambda_coeff * lambda_base^n.
double cluster_score(const Matrix& points, const std::vector<int>& assignment, int n,
                     double lambda_coeff = 0.1, double lambda_base = 2.718281828459045);

struct ClusterOptions {
  int k_max = 8;
  double lambda_coeff = 0.1;
  double lambda_base = 2.718281828459045;
  int restarts = 10;
  std::uint64_t seed = 0;
};

struct ClusterModel {
  int n_star = 0;
  std::map<std::string, int> assignment;
  Matrix centroids;
  std::vector<std::vector<std::string>> member_order;
  std::vector<std::string> stacked_prompt_keys;
  std::map<int, double> score_table;

  int cluster_of(const std::string& category) const;
};

nlohmann::json to_json(const ClusterModel& model);
ClusterModel cluster_model_from_json(const nlohmann::json& j);
void save_cluster_model(const ClusterModel& model, const std::filesystem::path& path);
ClusterModel load_cluster_model(const std::filesystem::path& path);
// SHA-256 (hex) of the canonical JSON serialization.
std::string cluster_model_digest(const ClusterModel& model);

// Runs kmeans for n = 1..k_max, scores each partition and keeps the argmin
// (ties to the smaller n). Clusters are numbered by their first category in
// input order; members are ordered by descending cosine to the centroid.
ClusterModel select_clusters(const Matrix& points, const std::vector<std::string>& categories,
                             const ClusterOptions& options);

// Orders names by descending cosine to `centroid`, lexicographic on ties.
std::vector<std::string> order_by_centroid(const Matrix& points, const std::vector<std::size_t>& rows,
                                           const std::vector<std::string>& names,
                                           std::span<const double> centroid);

// All state prompts for one key.
struct PromptGroup {
  int cluster = 0;
  std::string key;
  std::vector<std::string> normal;
  std::vector<std::string> abnormal;
};

PromptGroup prompts_for_classes(int cluster, const std::vector<std::string>& classes,
                                const PromptTemplateSet& templates);
std::vector<PromptGroup> stacked_prompts(const ClusterModel& model, const PromptTemplateSet& templates);
// One group per cluster: the test class first, then the cluster's members
// (the test class is not repeated if it is itself a member).
std::vector<PromptGroup> build_test_prompts(const std::string& test_class, const ClusterModel& model,
                                             const PromptTemplateSet& templates);

// Reference classes for the single-cluster stacked prompt over all
// categories, ordered against their joint centroid.
std::vector<std::string> single_cluster_members(const Matrix& points, const std::vector<std::string>& categories);

// Newline-delimited "key<TAB>normal|abnormal<TAB>prompt" lines.
void write_prompt_list(const std::vector<PromptGroup>& groups, const std::filesystem::path& path);
std::vector<PromptGroup> read_prompt_list(const std::filesystem::path& path);

}  // namespace stackad
