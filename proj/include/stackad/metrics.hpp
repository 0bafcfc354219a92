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
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace stackad {

// Rank-based AUROC with midranks for ties. Throws on single-class labels.
double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Non-interpolated AP: sum over distinct thresholds (descending) of
// (recall gain) * precision. Tied scores enter as one group.
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);

// Max F1 over thresholds at every distinct score (score >= t is positive).
double f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RegionSet {
  int height = 0;
  int width = 0;
  std::vector<int> labels;                // 0 = background, 1..n in row-major first-pixel order
  std::vector<std::vector<int>> regions;  // pixel indices of region i+1
};

// 8-connected components of the nonzero pixels.
RegionSet connected_components(std::span<const std::uint8_t> mask, int height, int width);

struct ScoreMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;
};

struct ProPoint {
  double fpr = 0.0;
  double pro = 0.0;
};

struct AuproOptions {
  double fpr_cap = 0.3;
  int steps = 512;
};

// Thresholds are `steps` nearest-rank quantiles of the pooled scores. The
// curve (with a leading (0, 0)) is integrated by trapezoid up to fpr_cap and
// divided by fpr_cap.
double aupro(const std::vector<ScoreMap>& maps, const std::vector<std::vector<std::uint8_t>>& gts,
             const AuproOptions& options = {}, std::vector<ProPoint>* curve = nullptr);

// Trapezoid area of a curve sorted by x, clipped at `cap`, divided by `cap`.
double capped_area(std::vector<ProPoint> points, double cap);

struct MetricsReport {
  double pixel_aupro = 0.0;
  double pixel_ap = 0.0;
  double pixel_f1max = 0.0;
  double image_auroc = 0.0;
  double image_ap = 0.0;
  double image_f1max = 0.0;
  double pixel_auroc = 0.0;
  std::vector<ProPoint> pro_curve;
  std::vector<std::pair<double, double>> image_roc;
};

MetricsReport evaluate_run(const std::vector<ScoreMap>& maps, const std::vector<std::vector<std::uint8_t>>& gts,
                           std::span<const double> image_scores, std::span<const std::uint8_t> image_labels,
                           const AuproOptions& options = {});

// {"metrics": {"pixel": {aupro, ap, f1max}, "image": {auroc, ap, f1max}},
//  "supplementary": {"pixel_auroc": ...}}
nlohmann::json report_to_json(const MetricsReport& report);
std::string report_table(const MetricsReport& report);
void write_curves_csv(const MetricsReport& report, const std::filesystem::path& path);

// (fpr, tpr) at every distinct threshold, starting at (0, 0).
std::vector<std::pair<double, double>> roc_curve(std::span<const double> scores,
                                                 std::span<const std::uint8_t> labels);

}  // namespace stackad
