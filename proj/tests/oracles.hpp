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

// Independent brute-force implementations used to freeze and check expected
// values. Deliberately naive; none of them call into the library's metric,
// clustering or gradient code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <vector>

namespace oracle {

inline double pair_counting_auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0;
  double pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] == 0) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      pairs += 1.0;
      if (s[i] > s[j]) {
        wins += 1.0;
      } else if (s[i] == s[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / pairs;
}

struct Confusion {
  double tp = 0;
  double fp = 0;
  double fn = 0;
};

inline Confusion at_threshold(const std::vector<double>& s, const std::vector<std::uint8_t>& y, double t) {
  Confusion c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred = s[i] >= t;
    if (pred && y[i]) c.tp += 1;
    if (pred && !y[i]) c.fp += 1;
    if (!pred && y[i]) c.fn += 1;
  }
  return c;
}

inline std::vector<double> distinct_desc(const std::vector<double>& s) {
  std::set<double, std::greater<>> u(s.begin(), s.end());
  return {u.begin(), u.end()};
}

// AP as recall-weighted precision over every distinct threshold.
inline double sweep_ap(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double positives = 0;
  for (auto v : y) positives += v ? 1 : 0;
  double ap = 0.0;
  double prev_recall = 0.0;
  for (double t : distinct_desc(s)) {
    const auto c = at_threshold(s, y, t);
    const double recall = c.tp / positives;
    if (c.tp + c.fp > 0) ap += (recall - prev_recall) * c.tp / (c.tp + c.fp);
    prev_recall = recall;
  }
  return ap;
}

inline double sweep_f1(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double best = 0.0;
  for (double t : distinct_desc(s)) {
    const auto c = at_threshold(s, y, t);
    if (c.tp == 0) continue;
    const double p = c.tp / (c.tp + c.fp);
    const double r = c.tp / (c.tp + c.fn);
    best = std::max(best, 2 * p * r / (p + r));
  }
  return best;
}

// 8-connected regions by breadth-first flood fill.
inline std::vector<std::vector<int>> flood_regions(const std::vector<std::uint8_t>& m, int h, int w) {
  std::vector<int> seen(m.size(), 0);
  std::vector<std::vector<int>> out;
  for (int start = 0; start < h * w; ++start) {
    if (!m[start] || seen[start]) continue;
    std::vector<int> region;
    std::deque<int> q{start};
    seen[start] = 1;
    while (!q.empty()) {
      const int p = q.front();
      q.pop_front();
      region.push_back(p);
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int r = p / w + dr;
          const int c = p % w + dc;
          if (r < 0 || c < 0 || r >= h || c >= w) continue;
          const int n = r * w + c;
          if (m[n] && !seen[n]) {
            seen[n] = 1;
            q.push_back(n);
          }
        }
      }
    }
    std::sort(region.begin(), region.end());
    out.push_back(region);
  }
  return out;
}

// PRO curve at every distinct pooled value, integrated to `cap`.
inline double brute_aupro(const std::vector<std::vector<double>>& maps, const std::vector<std::vector<std::uint8_t>>& gts,
                          int h, int w, double cap) {
  std::vector<double> all;
  for (const auto& m : maps) all.insert(all.end(), m.begin(), m.end());
  std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
  for (double t : distinct_desc(all)) {
    double fp = 0;
    double neg = 0;
    double overlap = 0;
    double regions = 0;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      for (std::size_t p = 0; p < maps[i].size(); ++p) {
        if (!gts[i][p]) {
          neg += 1;
          if (maps[i][p] >= t) fp += 1;
        }
      }
      for (const auto& reg : flood_regions(gts[i], h, w)) {
        double hit = 0;
        for (int p : reg) hit += maps[i][p] >= t ? 1 : 0;
        overlap += hit / reg.size();
        regions += 1;
      }
    }
    pts.emplace_back(fp / neg, overlap / regions);
  }
  std::sort(pts.begin(), pts.end());
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    auto [x0, y0] = pts[i - 1];
    auto [x1, y1] = pts[i];
    if (x0 >= cap) break;
    if (x1 > cap) {
      y1 = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
      x1 = cap;
    }
    area += (x1 - x0) * (y0 + y1) / 2;
  }
  return area / cap;
}

// Sum over clusters of mean squared distance to the cluster mean.
inline double partition_cost(const std::vector<std::vector<double>>& pts, const std::vector<int>& a, int k) {
  double total = 0;
  for (int c = 0; c < k; ++c) {
    std::vector<double> mean(pts[0].size(), 0.0);
    int n = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (a[i] != c) continue;
      ++n;
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += pts[i][j];
    }
    if (n == 0) continue;
    for (double& m : mean) m /= n;
    double ss = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (a[i] != c) continue;
      for (std::size_t j = 0; j < mean.size(); ++j) ss += (pts[i][j] - mean[j]) * (pts[i][j] - mean[j]);
    }
    total += ss / n;
  }
  return total;
}

// Minimum within-cluster sum of squares over all partitions into exactly k
// non-empty clusters.
inline double exhaustive_inertia(const std::vector<std::vector<double>>& pts, int k) {
  const int n = static_cast<int>(pts.size());
  std::vector<int> a(n, 0);
  double best = std::numeric_limits<double>::infinity();
  std::function<void(int, int)> rec = [&](int i, int used) {
    if (i == n) {
      if (used != k) return;
      double ss = 0;
      for (int c = 0; c < k; ++c) {
        std::vector<double> mean(pts[0].size(), 0.0);
        int cnt = 0;
        for (int p = 0; p < n; ++p) {
          if (a[p] != c) continue;
          ++cnt;
          for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += pts[p][j];
        }
        for (double& m : mean) m /= cnt;
        for (int p = 0; p < n; ++p) {
          if (a[p] != c) continue;
          for (std::size_t j = 0; j < mean.size(); ++j) ss += (pts[p][j] - mean[j]) * (pts[p][j] - mean[j]);
        }
      }
      best = std::min(best, ss);
      return;
    }
    // Restricted growth strings enumerate each partition once.
    for (int c = 0; c <= std::min(used, k - 1); ++c) {
      a[i] = c;
      rec(i + 1, std::max(used, c + 1));
    }
  };
  rec(0, 0);
  return best;
}

// Fourth-order central differences of f over every coordinate of x,
// evaluated in extended precision.
inline std::vector<double> central_diff(const std::function<long double(const std::vector<long double>&)>& f,
                                        const std::vector<double>& x0, long double h) {
  std::vector<long double> x(x0.begin(), x0.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const long double keep = x[i];
    long double v[4];
    const long double offsets[4] = {2 * h, h, -h, -2 * h};
    for (int k = 0; k < 4; ++k) {
      x[i] = keep + offsets[k];
      v[k] = f(x);
    }
    x[i] = keep;
    g[i] = static_cast<double>((-v[0] + 8 * v[1] - 8 * v[2] + v[3]) / (12 * h));
  }
  return g;
}

// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
inline double max_rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric, double floor) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double scale = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / scale);
  }
  return worst;
}

}  // namespace oracle
