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

#include "stackad/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "stackad/error.hpp"

namespace stackad {

namespace {

void check_scored(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.empty() || scores.size() != labels.size()) {
    throw ValidationError("metrics: scores and labels must be non-empty and of equal length");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("metrics: non-finite score");
  }
}

std::size_t count_positive(std::span<const std::uint8_t> labels) {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](auto y) { return y != 0; }));
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

// Cumulative (tp, fp) after each group of tied scores, descending.
std::vector<std::pair<std::size_t, std::size_t>> threshold_counts(std::span<const double> scores,
                                                                  std::span<const std::uint8_t> labels) {
  const auto order = descending_order(scores);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (labels[order[i]] != 0) {
      ++tp;
    } else {
      ++fp;
    }
    if (i + 1 == order.size() || scores[order[i + 1]] != scores[order[i]]) out.emplace_back(tp, fp);
  }
  return out;
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_scored(scores, labels);
  const std::size_t n_pos = count_positive(labels);
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("degenerate labels");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[order[k]] != 0) rank_sum += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_scored(scores, labels);
  const std::size_t n_pos = count_positive(labels);
  if (n_pos == 0) throw ValidationError("average precision: no positives");
  double ap = 0.0;
  std::size_t prev_tp = 0;
  for (const auto& [tp, fp] : threshold_counts(scores, labels)) {
    if (tp != prev_tp) {
      const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      ap += static_cast<double>(tp - prev_tp) / static_cast<double>(n_pos) * precision;
      prev_tp = tp;
    }
  }
  return ap;
}

double f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  check_scored(scores, labels);
  const std::size_t n_pos = count_positive(labels);
  if (n_pos == 0) throw ValidationError("f1_max: no positives");
  double best = 0.0;
  for (const auto& [tp, fp] : threshold_counts(scores, labels)) {
    if (tp == 0) continue;
    const double f1 = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + (n_pos - tp));
    best = std::max(best, f1);
  }
  return best;
}

std::vector<std::pair<double, double>> roc_curve(std::span<const double> scores,
                                                 std::span<const std::uint8_t> labels) {
  check_scored(scores, labels);
  const std::size_t n_pos = count_positive(labels);
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("degenerate labels");
  std::vector<std::pair<double, double>> out{{0.0, 0.0}};
  for (const auto& [tp, fp] : threshold_counts(scores, labels)) {
    out.emplace_back(static_cast<double>(fp) / static_cast<double>(n_neg),
                     static_cast<double>(tp) / static_cast<double>(n_pos));
  }
  return out;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  void unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent[b] = a;
  }
};

}  // namespace

RegionSet connected_components(std::span<const std::uint8_t> mask, int height, int width) {
  if (height < 0 || width < 0 || mask.size() != static_cast<std::size_t>(height) * width) {
    throw ValidationError("connected_components: mask size does not match shape");
  }
  RegionSet out;
  out.height = height;
  out.width = width;
  out.labels.assign(mask.size(), 0);
  UnionFind uf(mask.size());
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const int i = r * width + c;
      if (mask[i] == 0) continue;
      // Previously visited 8-neighbours: W, NW, N, NE.
      const int nbr[4][2] = {{0, -1}, {-1, -1}, {-1, 0}, {-1, 1}};
      for (const auto& d : nbr) {
        const int rr = r + d[0];
        const int cc = c + d[1];
        if (rr < 0 || cc < 0 || cc >= width) continue;
        const int j = rr * width + cc;
        if (mask[j] != 0) uf.unite(i, j);
      }
    }
  }
  std::vector<int> root_label(mask.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] == 0) continue;
    const int root = uf.find(static_cast<int>(i));
    if (root_label[root] == 0) {
      out.regions.emplace_back();
      root_label[root] = static_cast<int>(out.regions.size());
    }
    out.labels[i] = root_label[root];
    out.regions[root_label[root] - 1].push_back(static_cast<int>(i));
  }
  return out;
}

double capped_area(std::vector<ProPoint> points, double cap) {
  if (!(cap > 0.0)) throw ValidationError("aupro: fpr_cap must be > 0");
  std::sort(points.begin(), points.end(), [](const ProPoint& a, const ProPoint& b) {
    return a.fpr < b.fpr || (a.fpr == b.fpr && a.pro < b.pro);
  });
  double area = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const auto& a = points[i - 1];
    const auto& b = points[i];
    if (a.fpr >= cap) break;
    if (b.fpr <= cap) {
      area += (b.fpr - a.fpr) * 0.5 * (a.pro + b.pro);
    } else {
      const double t = (cap - a.fpr) / (b.fpr - a.fpr);
      const double pro_cap = a.pro + t * (b.pro - a.pro);
      area += (cap - a.fpr) * 0.5 * (a.pro + pro_cap);
      break;
    }
  }
  return area / cap;
}

double aupro(const std::vector<ScoreMap>& maps, const std::vector<std::vector<std::uint8_t>>& gts,
             const AuproOptions& options, std::vector<ProPoint>* curve) {
  if (maps.empty() || maps.size() != gts.size()) throw ValidationError("aupro: maps and masks differ in count");
  if (options.steps < 2) throw ValidationError("aupro: need at least 2 threshold steps");

  std::vector<double> pooled;
  std::vector<int> region_of;  // -1 for negative pixels
  std::vector<double> region_size;
  std::size_t n_neg = 0;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const auto& map = maps[m];
    if (map.values.size() != static_cast<std::size_t>(map.height) * map.width || gts[m].size() != map.values.size()) {
      throw ValidationError("aupro: map " + std::to_string(m) + " does not match its mask");
    }
    const auto regions = connected_components(gts[m], map.height, map.width);
    const int offset = static_cast<int>(region_size.size());
    for (const auto& reg : regions.regions) region_size.push_back(static_cast<double>(reg.size()));
    for (std::size_t i = 0; i < map.values.size(); ++i) {
      if (!std::isfinite(map.values[i])) throw NumericError("aupro: non-finite map value");
      pooled.push_back(map.values[i]);
      if (regions.labels[i] == 0) {
        region_of.push_back(-1);
        ++n_neg;
      } else {
        region_of.push_back(offset + regions.labels[i] - 1);
      }
    }
  }
  if (region_size.empty()) throw ValidationError("aupro: no anomalous region");
  if (n_neg == 0) throw ValidationError("aupro: no negative pixels");

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  std::vector<double> thresholds;
  for (int k = 0; k < options.steps; ++k) {
    const auto idx = static_cast<std::size_t>(static_cast<double>(k) * static_cast<double>(n - 1) /
                                              static_cast<double>(options.steps - 1));
    thresholds.push_back(sorted[std::min(idx, n - 1)]);
  }
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  // Sweep thresholds from high to low, admitting pixels in descending order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] > pooled[b]; });
  double overlap_sum = 0.0;
  std::size_t fp = 0;
  std::size_t next = 0;
  std::vector<ProPoint> points{{0.0, 0.0}};
  const double n_regions = static_cast<double>(region_size.size());
  for (double t : thresholds) {
    while (next < n && pooled[order[next]] >= t) {
      const int reg = region_of[order[next]];
      if (reg < 0) {
        ++fp;
      } else {
        overlap_sum += 1.0 / region_size[reg];
      }
      ++next;
    }
    points.push_back({static_cast<double>(fp) / static_cast<double>(n_neg), overlap_sum / n_regions});
  }
  if (curve != nullptr) *curve = points;
  return capped_area(std::move(points), options.fpr_cap);
}

MetricsReport evaluate_run(const std::vector<ScoreMap>& maps, const std::vector<std::vector<std::uint8_t>>& gts,
                           std::span<const double> image_scores, std::span<const std::uint8_t> image_labels,
                           const AuproOptions& options) {
  MetricsReport r;
  r.pixel_aupro = aupro(maps, gts, options, &r.pro_curve);
  std::vector<double> pixels;
  std::vector<std::uint8_t> pixel_labels;
  for (std::size_t m = 0; m < maps.size(); ++m) {
    pixels.insert(pixels.end(), maps[m].values.begin(), maps[m].values.end());
    for (auto g : gts[m]) pixel_labels.push_back(g != 0 ? 1 : 0);
  }
  r.pixel_ap = average_precision(pixels, pixel_labels);
  r.pixel_f1max = f1_max(pixels, pixel_labels);
  r.pixel_auroc = auroc(pixels, pixel_labels);
  r.image_auroc = auroc(image_scores, image_labels);
  r.image_ap = average_precision(image_scores, image_labels);
  r.image_f1max = f1_max(image_scores, image_labels);
  r.image_roc = roc_curve(image_scores, image_labels);
  return r;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  return {{"metrics",
           {{"pixel", {{"aupro", r.pixel_aupro}, {"ap", r.pixel_ap}, {"f1max", r.pixel_f1max}}},
            {"image", {{"auroc", r.image_auroc}, {"ap", r.image_ap}, {"f1max", r.image_f1max}}}}},
          {"supplementary", {{"pixel_auroc", r.pixel_auroc}}}};
}

std::string report_table(const MetricsReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "level   AUROC   AUPRO   AP      F1-max\n";
  out << "pixel   " << std::setw(5) << 100.0 * r.pixel_auroc << "*  " << std::setw(5) << 100.0 * r.pixel_aupro
      << "   " << std::setw(5) << 100.0 * r.pixel_ap << "   " << std::setw(5) << 100.0 * r.pixel_f1max << '\n';
  out << "image   " << std::setw(5) << 100.0 * r.image_auroc << "       -     " << std::setw(5) << 100.0 * r.image_ap
      << "   " << std::setw(5) << 100.0 * r.image_f1max << '\n';
  out << "(* supplementary)\n";
  return out.str();
}

void write_curves_csv(const MetricsReport& r, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << "curve,x,y\n" << std::setprecision(17);
  for (const auto& p : r.pro_curve) out << "pro," << p.fpr << ',' << p.pro << '\n';
  for (const auto& [x, y] : r.image_roc) out << "image_roc," << x << ',' << y << '\n';
}

}  // namespace stackad
