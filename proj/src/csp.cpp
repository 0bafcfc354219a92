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

#include "stackad/csp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "stackad/error.hpp"
#include "stackad/hash.hpp"
#include "stackad/mock.hpp"

namespace stackad {

namespace fs = std::filesystem;
using nlohmann::json;

Matrix category_text_features(const std::vector<std::string>& categories, const TextProvider& provider,
                              const PromptTemplateSet& templates) {
  for (std::size_t i = 0; i < categories.size(); ++i) {
    validate_class_name(categories[i]);
    for (std::size_t j = 0; j < i; ++j) {
      if (categories[i] == categories[j]) throw ValidationError("duplicate category '" + categories[i] + "'");
    }
  }
  Matrix out(categories.size(), static_cast<std::size_t>(provider.dim()));
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const TextFeature tf = provider.text_feature(categories[i], templates);
    if (tf.normal.size() != out.cols) {
      throw ValidationError("text feature for '" + categories[i] + "' has wrong dimension");
    }
    auto row = out.row(i);
    std::copy(tf.normal.begin(), tf.normal.end(), row.begin());
    if (!normalize_in_place(row)) throw NumericError("zero text feature for '" + categories[i] + "'");
  }
  return out;
}

// ---------------------------------------------------------------------------
// k-means

namespace {

std::vector<int> nearest_assignment(const Matrix& points, const Matrix& centers) {
  std::vector<int> out(points.rows);
  for (std::size_t i = 0; i < points.rows; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < centers.rows; ++c) {
      const double d = squared_distance(points.row(i), centers.row(c));
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    out[i] = arg;
  }
  return out;
}

Matrix cluster_means(const Matrix& points, const std::vector<int>& assignment, int k,
                     std::vector<int>* sizes = nullptr) {
  Matrix means(static_cast<std::size_t>(k), points.cols);
  std::vector<int> count(k, 0);
  for (std::size_t i = 0; i < points.rows; ++i) {
    auto dst = means.row(static_cast<std::size_t>(assignment[i]));
    const auto src = points.row(i);
    for (std::size_t j = 0; j < points.cols; ++j) dst[j] += src[j];
    ++count[assignment[i]];
  }
  for (int c = 0; c < k; ++c) {
    if (count[c] == 0) continue;
    for (double& x : means.row(static_cast<std::size_t>(c))) x /= count[c];
  }
  if (sizes != nullptr) *sizes = std::move(count);
  return means;
}

// Moves the point farthest from its (non-singleton) cluster mean into each
// empty cluster.
void repair_empty_clusters(const Matrix& points, std::vector<int>& assignment, int k) {
  for (int target = 0; target < k; ++target) {
    std::vector<int> sizes;
    const Matrix means = cluster_means(points, assignment, k, &sizes);
    if (sizes[target] > 0) continue;
    double worst = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < points.rows; ++i) {
      if (sizes[assignment[i]] < 2) continue;
      const double d = squared_distance(points.row(i), means.row(static_cast<std::size_t>(assignment[i])));
      if (d > worst) {
        worst = d;
        arg = i;
      }
    }
    assignment[arg] = target;
  }
}

double inertia_of(const Matrix& points, const std::vector<int>& assignment, const Matrix& centers) {
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    total += squared_distance(points.row(i), centers.row(static_cast<std::size_t>(assignment[i])));
  }
  return total;
}

void check_kmeans_input(const Matrix& points, int k) {
  if (k < 1) throw ValidationError("kmeans: k must be positive");
  if (static_cast<std::size_t>(k) > points.rows) {
    throw ValidationError("kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(points.rows) +
                          " points");
  }
  for (double x : points.data) {
    if (!std::isfinite(x)) throw NumericError("kmeans: non-finite input");
  }
}

}  // namespace

KMeansResult kmeans_single(const Matrix& points, int k, std::uint64_t seed) {
  check_kmeans_input(points, k);
  const std::size_t n = points.rows;
  std::mt19937_64 rng(seed);

  // k-means++ seeding.
  Matrix centers(static_cast<std::size_t>(k), points.cols);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  for (int c = 0; c < k; ++c) {
    if (c > 0) {
      const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
      if (total > 0.0) {
        double u = std::uniform_real_distribution<double>(0.0, total)(rng);
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          if (u < d2[i]) {
            pick = i;
            break;
          }
          u -= d2[i];
        }
      } else {
        pick = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
      }
    }
    const auto src = points.row(pick);
    std::copy(src.begin(), src.end(), centers.row(static_cast<std::size_t>(c)).begin());
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], squared_distance(points.row(i), src));
    }
  }

  KMeansResult result;
  std::vector<int> assignment = nearest_assignment(points, centers);
  while (true) {
    repair_empty_clusters(points, assignment, k);
    centers = cluster_means(points, assignment, k);
    if (result.iterations == kKMeansMaxIterations) break;
    auto next = nearest_assignment(points, centers);
    ++result.iterations;
    if (next == assignment) break;
    assignment = std::move(next);
  }
  result.inertia = inertia_of(points, assignment, centers);
  result.assignment = std::move(assignment);
  result.centroids = std::move(centers);
  return result;
}

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int restarts) {
  check_kmeans_input(points, k);
  if (restarts < 1) throw ValidationError("kmeans: restarts must be positive");
  std::vector<KMeansResult> runs(static_cast<std::size_t>(restarts));
#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < restarts; ++r) {
    runs[static_cast<std::size_t>(r)] = kmeans_single(points, k, mix_seed(seed, static_cast<std::uint64_t>(r)));
  }
  std::size_t best = 0;
  for (std::size_t r = 1; r < runs.size(); ++r) {
    if (runs[r].inertia < runs[best].inertia) best = r;
  }
  return std::move(runs[best]);
}

double cluster_score(const Matrix& points, const std::vector<int>& assignment, int n, double lambda_coeff,
                     double lambda_base) {
  if (assignment.size() != points.rows) throw ValidationError("cluster_score: assignment size mismatch");
  if (n < 1) throw ValidationError("cluster_score: n must be positive");
  for (int a : assignment) {
    if (a < 0 || a >= n) throw ValidationError("cluster_score: cluster index out of range");
  }
  std::vector<int> sizes;
  const Matrix means = cluster_means(points, assignment, n, &sizes);
  for (int c = 0; c < n; ++c) {
    if (sizes[c] == 0) throw ValidationError("cluster_score: empty cluster " + std::to_string(c));
  }
  std::vector<double> spread(n, 0.0);
  for (std::size_t i = 0; i < points.rows; ++i) {
    spread[assignment[i]] += squared_distance(points.row(i), means.row(static_cast<std::size_t>(assignment[i])));
  }
  double score = 0.0;
  for (int c = 0; c < n; ++c) score += spread[c] / sizes[c];
  return score + lambda_coeff * std::pow(lambda_base, n);
}

// ---------------------------------------------------------------------------

int ClusterModel::cluster_of(const std::string& category) const {
  auto it = assignment.find(category);
  if (it == assignment.end()) throw ValidationError("category '" + category + "' is not in the cluster model");
  return it->second;
}

json to_json(const ClusterModel& m) {
  json scores = json::object();
  for (const auto& [n, s] : m.score_table) scores[std::to_string(n)] = s;
  json centroids = json::array();
  for (std::size_t i = 0; i < m.centroids.rows; ++i) {
    const auto row = m.centroids.row(i);
    centroids.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return {{"n_star", m.n_star},
          {"assignment", m.assignment},
          {"centroids", centroids},
          {"member_order", m.member_order},
          {"stacked_prompt_keys", m.stacked_prompt_keys},
          {"score_table", scores}};
}

ClusterModel cluster_model_from_json(const json& j) {
  ClusterModel m;
  try {
    m.n_star = j.at("n_star").get<int>();
    m.assignment = j.at("assignment").get<std::map<std::string, int>>();
    m.member_order = j.at("member_order").get<std::vector<std::vector<std::string>>>();
    m.stacked_prompt_keys = j.at("stacked_prompt_keys").get<std::vector<std::string>>();
    for (const auto& [n, s] : j.at("score_table").items()) m.score_table[std::stoi(n)] = s.get<double>();
    const auto rows = j.at("centroids").get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
      m.centroids = Matrix(rows.size(), rows.front().size());
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy(rows[i].begin(), rows[i].end(), m.centroids.row(i).begin());
      }
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cluster model: ") + e.what());
  }
  if (m.n_star < 1 || m.member_order.size() != static_cast<std::size_t>(m.n_star) ||
      m.stacked_prompt_keys.size() != static_cast<std::size_t>(m.n_star)) {
    throw ValidationError("cluster model: inconsistent cluster count");
  }
  for (const auto& members : m.member_order) {
    if (members.empty()) throw ValidationError("cluster model: empty cluster");
  }
  return m;
}

void save_cluster_model(const ClusterModel& model, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << to_json(model).dump(2) << '\n';
}

ClusterModel load_cluster_model(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("cluster model not found: '" + path.string() + "'");
  try {
    return cluster_model_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError("cluster model '" + path.string() + "': " + e.what());
  }
}

std::string cluster_model_digest(const ClusterModel& model) { return sha256_hex(to_json(model).dump()); }

std::vector<std::string> order_by_centroid(const Matrix& points, const std::vector<std::size_t>& rows,
                                           const std::vector<std::string>& names,
                                           std::span<const double> centroid) {
  const double cnorm = std::sqrt(dot(centroid, centroid));
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t r : rows) {
    const auto p = points.row(r);
    const double pnorm = std::sqrt(dot(p, p));
    const double cosine = (cnorm > 0.0 && pnorm > 0.0) ? dot(p, centroid) / (cnorm * pnorm) : 0.0;
    scored.emplace_back(cosine, names[r]);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> out;
  for (auto& s : scored) out.push_back(std::move(s.second));
  return out;
}

ClusterModel select_clusters(const Matrix& points, const std::vector<std::string>& categories,
                             const ClusterOptions& options) {
  if (categories.size() != points.rows) throw ValidationError("select_clusters: one row per category required");
  if (options.k_max < 1 || static_cast<std::size_t>(options.k_max) > points.rows) {
    throw ValidationError("select_clusters: k_max must lie in [1, number of categories]");
  }
  ClusterModel model;
  std::vector<KMeansResult> fits;
  double best_score = std::numeric_limits<double>::infinity();
  int best_n = 0;
  for (int n = 1; n <= options.k_max; ++n) {
    fits.push_back(kmeans(points, n, mix_seed(options.seed, static_cast<std::uint64_t>(n)), options.restarts));
    const double s = cluster_score(points, fits.back().assignment, n, options.lambda_coeff, options.lambda_base);
    model.score_table[n] = s;
    if (s < best_score) {
      best_score = s;
      best_n = n;
    }
  }
  model.n_star = best_n;
  const auto& fit = fits[static_cast<std::size_t>(best_n - 1)];

  // Canonical numbering: order of first appearance in the category list.
  std::vector<int> relabel(best_n, -1);
  int next = 0;
  for (int a : fit.assignment) {
    if (relabel[a] < 0) relabel[a] = next++;
  }
  std::vector<std::vector<std::size_t>> rows(best_n);
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const int c = relabel[fit.assignment[i]];
    model.assignment[categories[i]] = c;
    rows[c].push_back(i);
  }
  model.centroids = Matrix(static_cast<std::size_t>(best_n), points.cols);
  for (int c = 0; c < best_n; ++c) {
    auto dst = model.centroids.row(static_cast<std::size_t>(c));
    for (std::size_t r : rows[c]) {
      const auto p = points.row(r);
      for (std::size_t j = 0; j < points.cols; ++j) dst[j] += p[j] / static_cast<double>(rows[c].size());
    }
    model.member_order.push_back(order_by_centroid(points, rows[c], categories, dst));
    model.stacked_prompt_keys.push_back(prompt_key(model.member_order.back()));
  }
  return model;
}

std::vector<std::string> single_cluster_members(const Matrix& points, const std::vector<std::string>& categories) {
  std::vector<std::size_t> rows(points.rows);
  std::iota(rows.begin(), rows.end(), 0);
  std::vector<double> centroid(points.cols, 0.0);
  for (std::size_t r : rows) {
    const auto p = points.row(r);
    for (std::size_t j = 0; j < points.cols; ++j) centroid[j] += p[j] / static_cast<double>(points.rows);
  }
  return order_by_centroid(points, rows, categories, centroid);
}

// ---------------------------------------------------------------------------
// Prompts

PromptGroup prompts_for_classes(int cluster, const std::vector<std::string>& classes,
                                const PromptTemplateSet& templates) {
  PromptGroup g;
  g.cluster = cluster;
  g.key = prompt_key(classes);
  for (const auto& s : templates.normal_states) g.normal.push_back(build_prompt(s, classes, templates));
  for (const auto& s : templates.abnormal_states) g.abnormal.push_back(build_prompt(s, classes, templates));
  return g;
}

std::vector<PromptGroup> stacked_prompts(const ClusterModel& model, const PromptTemplateSet& templates) {
  std::vector<PromptGroup> out;
  for (int c = 0; c < model.n_star; ++c) {
    out.push_back(prompts_for_classes(c, model.member_order[static_cast<std::size_t>(c)], templates));
  }
  return out;
}

std::vector<PromptGroup> build_test_prompts(const std::string& test_class, const ClusterModel& model,
                                             const PromptTemplateSet& templates) {
  validate_class_name(test_class);
  std::vector<PromptGroup> out;
  for (int c = 0; c < model.n_star; ++c) {
    std::vector<std::string> classes{test_class};
    for (const auto& m : model.member_order[static_cast<std::size_t>(c)]) {
      if (m != test_class) classes.push_back(m);
    }
    out.push_back(prompts_for_classes(c, classes, templates));
  }
  return out;
}

void write_prompt_list(const std::vector<PromptGroup>& groups, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  for (const auto& g : groups) {
    for (const auto& p : g.normal) out << g.key << "\tnormal\t" << p << '\n';
    for (const auto& p : g.abnormal) out << g.key << "\tabnormal\t" << p << '\n';
  }
}

std::vector<PromptGroup> read_prompt_list(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("prompt list not found: '" + path.string() + "'");
  std::vector<PromptGroup> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ValidationError("malformed prompt list line: '" + line + "'");
    const std::string key = line.substr(0, t1);
    const std::string channel = line.substr(t1 + 1, t2 - t1 - 1);
    if (out.empty() || out.back().key != key) {
      PromptGroup g;
      g.cluster = static_cast<int>(out.size());
      g.key = key;
      out.push_back(std::move(g));
    }
    if (channel == "normal") {
      out.back().normal.push_back(line.substr(t2 + 1));
    } else if (channel == "abnormal") {
      out.back().abnormal.push_back(line.substr(t2 + 1));
    } else {
      throw ValidationError("unknown prompt channel '" + channel + "'");
    }
  }
  return out;
}

}  // namespace stackad
