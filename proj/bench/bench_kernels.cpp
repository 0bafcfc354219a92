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

#include <omp.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <benchmark/benchmark.h>
#include <nlohmann/json.hpp>

#include "stackad/csp.hpp"
#include "stackad/efa.hpp"
#include "stackad/kernels.hpp"
#include "stackad/mock.hpp"

using namespace stackad;
namespace fs = std::filesystem;

namespace {

struct KernelData {
  int cells = 0;
  int d_txt = 0;
  int d_img = 0;
  std::vector<double> weight, bias, normal, abnormal, projected, out;
  std::vector<float> patches;

  KernelData(int side, int d_txt_, int d_img_) : cells(side * side), d_txt(d_txt_), d_img(d_img_) {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    auto fill = [&](auto& v, std::size_t size) {
      v.resize(size);
      for (auto& x : v) x = static_cast<std::decay_t<decltype(x)>>(n(rng));
    };
    fill(weight, static_cast<std::size_t>(d_txt) * d_img);
    fill(bias, d_txt);
    fill(patches, static_cast<std::size_t>(cells) * d_img);
    fill(normal, d_txt);
    fill(abnormal, d_txt);
    for (auto* t : {&normal, &abnormal}) {
      double s = 0;
      for (double x : *t) s += x * x;
      for (double& x : *t) x /= std::sqrt(s);
    }
    projected.resize(static_cast<std::size_t>(cells) * d_txt);
    out.resize(cells);
  }
};

// Grid 37, D_img 1024, D_txt 768: one full-size layer.
KernelData& full_size() {
  static KernelData d(37, 768, 1024);
  return d;
}

void BM_ProjectParallel(benchmark::State& state) {
  auto& d = full_size();
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    kernels::project(d.weight, d.bias, d.d_txt, d.d_img, d.patches, d.projected);
    benchmark::DoNotOptimize(d.projected.data());
  }
}
BENCHMARK(BM_ProjectParallel)->Arg(1)->Arg(2)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

void BM_ProjectReference(benchmark::State& state) {
  auto& d = full_size();
  for (auto _ : state) {
    kernels::reference::project(d.weight, d.bias, d.d_txt, d.d_img, d.patches, d.projected);
    benchmark::DoNotOptimize(d.projected.data());
  }
}
BENCHMARK(BM_ProjectReference)->UseRealTime()->Unit(benchmark::kMillisecond);

void BM_CosineSoftmaxParallel(benchmark::State& state) {
  auto& d = full_size();
  kernels::reference::project(d.weight, d.bias, d.d_txt, d.d_img, d.patches, d.projected);
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(kernels::cosine_softmax(d.projected, d.d_txt, d.normal, d.abnormal, 100.0, d.out));
  }
}
BENCHMARK(BM_CosineSoftmaxParallel)->Arg(1)->Arg(2)->Arg(4)->UseRealTime()->Unit(benchmark::kMicrosecond);

void BM_CosineSoftmaxReference(benchmark::State& state) {
  auto& d = full_size();
  kernels::reference::project(d.weight, d.bias, d.d_txt, d.d_img, d.patches, d.projected);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        kernels::reference::cosine_softmax(d.projected, d.d_txt, d.normal, d.abnormal, 100.0, d.out));
  }
}
BENCHMARK(BM_CosineSoftmaxReference)->UseRealTime()->Unit(benchmark::kMicrosecond);

struct MockTraining {
  std::vector<FeatureBundle> images;
  ClusterModel model;
  std::map<std::string, TextFeature> texts;
};

MockTraining& mock_training() {
  static MockTraining t = [] {
    std::ifstream in(fs::path(STACKAD_SOURCE_DIR) / "configs" / "mock_dataset.json");
    const auto spec = mock_spec_from_json(nlohmann::json::parse(in));
    const auto dir = fs::temp_directory_path() / "stackad_bench_mock";
    fs::remove_all(dir);
    const auto manifest = generate_mock_dataset(spec, dir);
    MockTraining m;
    for (const auto* e : manifest.split(Split::kTrain)) m.images.push_back(load_entry(*e, dir));
    const auto cats = manifest.categories(Split::kTrain);
    MockTextProvider provider(spec.encoder_seed, spec.d_txt);
    ClusterOptions opt;
    opt.k_max = static_cast<int>(cats.size());
    m.model = select_clusters(category_text_features(cats, provider, {}), cats, opt);
    for (const auto& key : m.model.stacked_prompt_keys) m.texts[key] = provider.text_feature(key, {});
    fs::remove_all(dir);
    return m;
  }();
  return t;
}

// Threads = 1 is the serial baseline of the same head-parallel loop.
void BM_TrainHeads(benchmark::State& state) {
  auto& t = mock_training();
  TrainConfig cfg;
  cfg.lr = 0.03;
  cfg.epochs = 8;
  omp_set_num_threads(static_cast<int>(state.range(0)));
  for (auto _ : state) {
    auto r = train_heads(t.images, t.model, t.texts, cfg);
    benchmark::DoNotOptimize(r.bank.heads.size());
  }
}
BENCHMARK(BM_TrainHeads)->Arg(1)->Arg(2)->Arg(4)->UseRealTime()->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
