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

#include <span>

// Per-cell inner loops of the alignment heads. The top-level functions run
// over cells with OpenMP; the `reference` versions are the plain serial loops
// they are tested and benchmarked against. Both perform the same arithmetic
// per cell, so results agree bit for bit.
namespace stackad::kernels {

// out[cell, r] = sum_c weight[r, c] * patches[cell, c] + bias[r]
void project(std::span<const double> weight, std::span<const double> bias, int d_txt, int d_img,
             std::span<const float> patches, std::span<double> out);

// out[cell] = softmax(scale * [cos(p, normal), cos(p, abnormal)])[abnormal].
// `normal` and `abnormal` must be unit vectors. Zero projections score 0.5;
// returns how many cells were zero.
int cosine_softmax(std::span<const double> projected, int d_txt, std::span<const double> normal,
                   std::span<const double> abnormal, double scale, std::span<double> out);

// Numerically stable logistic function.
double sigmoid(double x);

namespace reference {

void project(std::span<const double> weight, std::span<const double> bias, int d_txt, int d_img,
             std::span<const float> patches, std::span<double> out);

int cosine_softmax(std::span<const double> projected, int d_txt, std::span<const double> normal,
                   std::span<const double> abnormal, double scale, std::span<double> out);

}  // namespace reference
}  // namespace stackad::kernels
