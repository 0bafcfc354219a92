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

#include "stackad/kernels.hpp"

#include <cmath>
#include <cstddef>

namespace stackad::kernels {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace {

inline void project_cell(const double* weight, const double* bias, int d_txt, int d_img, const float* h,
                         double* out) {
  for (int r = 0; r < d_txt; ++r) {
    const double* w = weight + static_cast<std::size_t>(r) * d_img;
    double acc = bias[r];
    for (int c = 0; c < d_img; ++c) acc += w[c] * static_cast<double>(h[c]);
    out[r] = acc;
  }
}

// Returns false for a zero projection.
inline bool score_cell(const double* p, int d_txt, const double* normal, const double* abnormal, double scale,
                       double* out) {
  double sq = 0.0;
  double dn = 0.0;
  double da = 0.0;
  for (int r = 0; r < d_txt; ++r) {
    sq += p[r] * p[r];
    dn += p[r] * normal[r];
    da += p[r] * abnormal[r];
  }
  if (sq == 0.0) {
    *out = 0.5;
    return false;
  }
  const double inv = 1.0 / std::sqrt(sq);
  *out = sigmoid(scale * (da * inv - dn * inv));
  return true;
}

}  // namespace

void project(std::span<const double> weight, std::span<const double> bias, int d_txt, int d_img,
             std::span<const float> patches, std::span<double> out) {
  const int cells = static_cast<int>(patches.size() / static_cast<std::size_t>(d_img));
#pragma omp parallel for schedule(static)
  for (int cell = 0; cell < cells; ++cell) {
    project_cell(weight.data(), bias.data(), d_txt, d_img, patches.data() + static_cast<std::size_t>(cell) * d_img,
                 out.data() + static_cast<std::size_t>(cell) * d_txt);
  }
}

int cosine_softmax(std::span<const double> projected, int d_txt, std::span<const double> normal,
                   std::span<const double> abnormal, double scale, std::span<double> out) {
  const int cells = static_cast<int>(projected.size() / static_cast<std::size_t>(d_txt));
  int degenerate = 0;
#pragma omp parallel for schedule(static) reduction(+ : degenerate)
  for (int cell = 0; cell < cells; ++cell) {
    if (!score_cell(projected.data() + static_cast<std::size_t>(cell) * d_txt, d_txt, normal.data(),
                    abnormal.data(), scale, out.data() + cell)) {
      ++degenerate;
    }
  }
  return degenerate;
}

namespace reference {

void project(std::span<const double> weight, std::span<const double> bias, int d_txt, int d_img,
             std::span<const float> patches, std::span<double> out) {
  const std::size_t cells = patches.size() / static_cast<std::size_t>(d_img);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    project_cell(weight.data(), bias.data(), d_txt, d_img, patches.data() + cell * d_img, out.data() + cell * d_txt);
  }
}

int cosine_softmax(std::span<const double> projected, int d_txt, std::span<const double> normal,
                   std::span<const double> abnormal, double scale, std::span<double> out) {
  const std::size_t cells = projected.size() / static_cast<std::size_t>(d_txt);
  int degenerate = 0;
  for (std::size_t cell = 0; cell < cells; ++cell) {
    if (!score_cell(projected.data() + cell * d_txt, d_txt, normal.data(), abnormal.data(), scale,
                    out.data() + cell)) {
      ++degenerate;
    }
  }
  return degenerate;
}

}  // namespace reference
}  // namespace stackad::kernels
