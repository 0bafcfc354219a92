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
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stackad/adam.hpp"
#include "stackad/csp.hpp"
#include "stackad/feature_store.hpp"

namespace stackad {

// Per-cluster, per-layer linear alignment heads trained with focal + dice
// supervision, and their attention-weighted fusion at inference.

struct TrainConfig {
  double alpha = 1.0;
  double gamma = 2.0;
  double epsilon = 1.0;
  double logit_scale = 100.0;
  double lr = 1e-3;
  int epochs = 2;
  int batch_size = 16;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::vector<int> layers{kFeatureLayers.begin(), kFeatureLayers.end()};

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

inline constexpr double kProbabilityClamp = 1e-7;

struct ProjectionHead {
  int cluster = 0;
  int layer = 0;
  int d_txt = 0;
  int d_img = 0;
  std::vector<double> weight;  // d_txt x d_img, row-major
  std::vector<double> bias;    // d_txt
};

// W ~ U(-1/sqrt(d_img), 1/sqrt(d_img)), b = 0.
ProjectionHead init_head(int cluster, int layer, int d_txt, int d_img, std::uint64_t seed);

struct HeadBank {
  int n_clusters = 0;
  std::vector<int> layers;
  std::map<std::pair<int, int>, ProjectionHead> heads;  // (cluster, layer)
  std::string cluster_model_sha256;
  nlohmann::json train_config = nlohmann::json::object();

  const ProjectionHead& head(int cluster, int layer) const;
};

void save_head_bank(const HeadBank& bank, const std::filesystem::path& path);
HeadBank load_head_bank(const std::filesystem::path& path);

struct AnomalyMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

// Projected grid (cells x d_txt).
std::vector<double> project(const ProjectionHead& head, const PatchGrid& patches);

// Per-cell abnormal probability of the projected grid against `text`.
// Zero projections score 0.5 and are counted in `degenerate`.
AnomalyMap anomaly_map(std::span<const double> projected, int side, const TextFeature& text, double logit_scale,
                       int* degenerate = nullptr);

// Bilinear, align-corners.
AnomalyMap upsample(const AnomalyMap& map, int height, int width);

// Separable Gaussian blur with reflected borders; sigma <= 0 is a no-op.
AnomalyMap gaussian_smooth(const AnomalyMap& map, double sigma);

// A patch is positive if any pixel it covers is.
std::vector<std::uint8_t> downsample_mask(const Mask& mask, int side);

double focal_loss(const AnomalyMap& map, std::span<const std::uint8_t> gt, double alpha, double gamma);
double dice_loss(const AnomalyMap& map, std::span<const std::uint8_t> gt, double epsilon);

struct SegSample {
  const PatchGrid* patches = nullptr;
  std::span<const std::uint8_t> gt;  // side x side
};

struct SegLossGrad {
  double loss = 0.0;
  std::vector<double> d_weight;
  std::vector<double> d_bias;
  int degenerate = 0;
};

// Batch-mean focal + dice loss of one head and its exact gradient through
// projection, normalization, cosine and the scaled two-way softmax.
SegLossGrad seg_loss_and_grad(const ProjectionHead& head, std::span<const SegSample> batch,
                              const TextFeature& text, const TrainConfig& cfg);

struct LossRecord {
  int epoch = 0;
  int step = 0;
  int cluster = 0;
  int layer = 0;
  double loss = 0.0;
};

struct TrainResult {
  HeadBank bank;
  std::vector<LossRecord> curve;
};

// Trains every (cluster, layer) head on the training images of its cluster
// against that cluster's stacked-prompt features. Heads are independent and
// trained in parallel; each head's batch order comes from (seed, cluster).
TrainResult train_heads(std::span<const FeatureBundle> images, const ClusterModel& model,
                        const std::map<std::string, TextFeature>& texts, const TrainConfig& cfg);

void write_loss_csv(const std::vector<LossRecord>& curve, const std::filesystem::path& path);

// softmax_i cos(cls, normalize(mean(normal_i, abnormal_i))). A zero CLS gives
// uniform weights and sets `degenerate`.
std::vector<double> attention_weights(std::span<const float> cls, const std::vector<TextFeature>& cluster_texts,
                                      bool* degenerate = nullptr);

struct InferConfig {
  double logit_scale = 100.0;
  std::vector<int> layers{kFeatureLayers.begin(), kFeatureLayers.end()};
  double smoothing_sigma = 0.0;
  int height = 0;  // 0 keeps the bundle's own resolution
  int width = 0;
};

struct InferResult {
  AnomalyMap final_map;
  std::map<std::pair<int, int>, AnomalyMap> per_layer;  // (cluster, layer), patch resolution
  std::vector<double> weights;
  int degenerate = 0;
};

// M_final = (1/|L|) sum_l sum_i w_i M_i^l, upsampled to the image size.
InferResult infer(const FeatureBundle& bundle, const HeadBank& bank, const std::vector<TextFeature>& test_texts,
                  const InferConfig& cfg);

}  // namespace stackad
