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

#include "stackad/mock.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "stackad/error.hpp"

namespace stackad {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::uint64_t seeded_hash(std::uint64_t seed, std::string_view text) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001B3ull;
  }
  return mix_seed(seed, h);
}

std::string class_stem(std::string_view word) {
  std::string stem;
  for (char c : word) {
    if (!std::isalpha(static_cast<unsigned char>(c))) break;
    stem.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return stem.empty() ? std::string(word) : stem;
}

MockTextEncoder::MockTextEncoder(std::uint64_t seed, int dim, PromptTemplateSet templates)
    : seed_(seed), dim_(dim), state_dims_(std::max(1, dim / 4)), templates_(std::move(templates)) {
  if (dim < 2) throw ValidationError("mock text encoder needs dim >= 2");
  templates_.validate();
  template_words_ = templates_.template_words();
  for (const auto* list : {&templates_.normal_states, &templates_.abnormal_states}) {
    for (const auto& state : *list) {
      for (auto& w : split_words(state)) state_words_.push_back(std::move(w));
    }
  }
}

std::vector<double> MockTextEncoder::word_direction(std::string_view domain, std::string_view word,
                                                    int begin, int end) const {
  std::string tagged(domain);
  tagged += ':';
  tagged += word;
  std::mt19937_64 rng(seeded_hash(seed_, tagged));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> v(dim_, 0.0);
  for (int i = begin; i < end; ++i) v[i] = gauss(rng);
  normalize_in_place(v);
  return v;
}

std::vector<double> MockTextEncoder::embed(std::string_view prompt) const {
  if (prompt.empty()) throw ValidationError("mock_text_embed: empty prompt");
  std::vector<double> cls_part(dim_, 0.0);
  std::vector<double> state_part(dim_, 0.0);
  auto contains = [](const std::vector<std::string>& list, const std::string& w) {
    return std::find(list.begin(), list.end(), w) != list.end();
  };
  for (const auto& word : split_words(prompt)) {
    if (contains(template_words_, word)) continue;
    if (contains(state_words_, word)) {
      const auto v = word_direction("state", word, 0, state_dims_);
      for (int i = 0; i < dim_; ++i) state_part[i] += v[i];
      continue;
    }
    const auto stem = word_direction("stem", class_stem(word), state_dims_, dim_);
    const auto full = word_direction("word", word, state_dims_, dim_);
    for (int i = 0; i < dim_; ++i) cls_part[i] += kStemWeight * stem[i] + kWordWeight * full[i];
  }
  normalize_in_place(cls_part);
  normalize_in_place(state_part);
  std::vector<double> out(dim_);
  for (int i = 0; i < dim_; ++i) out[i] = cls_part[i] + kStateWeight * state_part[i];
  if (!normalize_in_place(out)) {
    // Prompt made only of template words: fall back to a hashed direction.
    out = word_direction("prompt", prompt, 0, dim_);
  }
  return out;
}

TextFeature MockTextEncoder::text_feature(const std::string& key) const {
  if (key.empty()) throw ValidationError("mock_text_embed: empty prompt");
  const auto classes = split_words(key);
  TextFeature tf;
  tf.prompt_key = key;
  for (const auto* states : {&templates_.normal_states, &templates_.abnormal_states}) {
    std::vector<double> acc(dim_, 0.0);
    for (const auto& state : *states) {
      const auto e = embed(build_prompt(state, classes, templates_));
      for (int i = 0; i < dim_; ++i) acc[i] += e[i];
    }
    normalize_in_place(acc);
    (states == &templates_.normal_states ? tf.normal : tf.abnormal) = to_float(acc);
  }
  return tf;
}

TextFeature mock_text_embed(const std::string& key, std::uint64_t seed, int dim,
                            const PromptTemplateSet& templates) {
  return MockTextEncoder(seed, dim, templates).text_feature(key);
}

TextFeature MockTextProvider::text_feature(const std::string& key, const PromptTemplateSet& templates) const {
  try {
    return MockTextEncoder(seed_, dim_, templates).text_feature(key);
  } catch (const Error& e) {
    throw ValidationError("prompt '" + key + "': " + e.what());
  }
}

// ---------------------------------------------------------------------------

void MockDatasetSpec::validate() const {
  if (!(anomaly_fraction >= 0.0 && anomaly_fraction <= 1.0)) {
    throw ValidationError("anomaly_fraction must lie in [0,1]");
  }
  if (categories.empty()) throw ValidationError("mock spec lists no categories");
  if (grid < 1 || d_img < 1 || d_txt < 2) throw ValidationError("mock dims must be positive");
  if (d_txt > d_img) throw ValidationError("mock spec requires D_txt <= D_img");
  if (height % grid != 0 || width % grid != 0) {
    throw ValidationError("mock image size must be a multiple of the grid side");
  }
  if (defect_min < 0 || defect_max < 0 || defect_max > grid || (defect_max > 0 && defect_min > defect_max)) {
    throw ValidationError("mock defect side range must satisfy 0 <= min <= max <= grid");
  }
  for (const auto& c : categories) {
    validate_class_name(c.name);
    if (c.train_images < 0 || c.test_images < 0) throw ValidationError("negative image count");
  }
  templates.validate();
}

json to_json(const MockDatasetSpec& spec) {
  json cats = json::array();
  for (const auto& c : spec.categories) {
    cats.push_back({{"name", c.name}, {"group", c.group}, {"train_images", c.train_images},
                    {"test_images", c.test_images}});
  }
  return {{"categories", cats},
          {"anomaly_fraction", spec.anomaly_fraction},
          {"grid", spec.grid},
          {"d_img", spec.d_img},
          {"d_txt", spec.d_txt},
          {"height", spec.height},
          {"width", spec.width},
          {"seed", spec.seed},
          {"encoder_seed", spec.encoder_seed},
          {"patch_noise", spec.patch_noise},
          {"nuisance_scale", spec.nuisance_scale},
          {"defect_min", spec.defect_min},
          {"defect_max", spec.defect_max},
          {"templates", to_json(spec.templates)}};
}

MockDatasetSpec mock_spec_from_json(const json& j) {
  MockDatasetSpec s;
  try {
    for (const auto& c : j.at("categories")) {
      s.categories.push_back({c.at("name").get<std::string>(), c.at("group").get<std::string>(),
                              c.at("train_images").get<int>(), c.at("test_images").get<int>()});
    }
    s.anomaly_fraction = j.at("anomaly_fraction").get<double>();
    s.grid = j.at("grid").get<int>();
    s.d_img = j.at("d_img").get<int>();
    s.d_txt = j.at("d_txt").get<int>();
    s.height = j.at("height").get<int>();
    s.width = j.at("width").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.encoder_seed = j.value("encoder_seed", s.encoder_seed);
    s.patch_noise = j.value("patch_noise", s.patch_noise);
    s.nuisance_scale = j.value("nuisance_scale", s.nuisance_scale);
    s.defect_min = j.value("defect_min", s.defect_min);
    s.defect_max = j.value("defect_max", s.defect_max);
    if (j.contains("templates")) s.templates = templates_from_json(j.at("templates"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("mock spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

// Random orthogonal matrix (row-major) by Gram-Schmidt on a Gaussian draw.
std::vector<double> random_rotation(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> q(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    std::span<double> row(q.data() + static_cast<std::size_t>(i) * n, n);
    do {
      for (double& x : row) x = gauss(rng);
      for (int k = 0; k < i; ++k) {
        std::span<const double> prev(q.data() + static_cast<std::size_t>(k) * n, n);
        double d = 0.0;
        for (int t = 0; t < n; ++t) d += row[t] * prev[t];
        for (int t = 0; t < n; ++t) row[t] -= d * prev[t];
      }
    } while (!normalize_in_place(row));
  }
  return q;
}

struct Rect {
  int r0, c0, rows, cols;
  bool contains(int r, int c) const { return r >= r0 && r < r0 + rows && c >= c0 && c < c0 + cols; }
};

std::string image_name(const std::string& category, Split split, int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%03d", index);
  return category + "_" + to_string(split) + "_" + buf;
}

}  // namespace

DatasetManifest generate_mock_dataset(const MockDatasetSpec& spec, const fs::path& out_dir) {
  spec.validate();
  MockTextEncoder encoder(spec.encoder_seed, spec.d_txt, spec.templates);
  const int g = spec.grid;
  const int cells = g * g;

  std::map<int, std::vector<double>> rotations;
  for (int layer : kFeatureLayers) {
    rotations[layer] = random_rotation(spec.d_img, mix_seed(spec.seed, 1000 + layer));
  }

  DatasetManifest manifest;
  manifest.dims = Dims{spec.d_img, spec.d_txt, g, spec.height, spec.width};

  for (const auto& category : spec.categories) {
    const TextFeature text = encoder.text_feature(category.name);
    const auto normal_dir = to_double(text.normal);
    const auto anomaly_dir = to_double(text.abnormal);

    for (Split split : {Split::kTrain, Split::kTest}) {
      const int count = split == Split::kTrain ? category.train_images : category.test_images;
      const int n_anomalous = static_cast<int>(std::lround(spec.anomaly_fraction * count));
      std::vector<int> order(count);
      std::iota(order.begin(), order.end(), 0);
      std::mt19937_64 pick(seeded_hash(spec.seed, category.name + "/" + to_string(split)));
      std::shuffle(order.begin(), order.end(), pick);
      std::vector<bool> anomalous(count, false);
      for (int k = 0; k < n_anomalous; ++k) anomalous[order[k]] = true;

      for (int index = 0; index < count; ++index) {
        const std::string id = image_name(category.name, split, index);
        std::mt19937_64 rng(seeded_hash(spec.seed, id));
        std::normal_distribution<double> gauss(0.0, 1.0);

        FeatureBundle b;
        b.image_id = id;
        b.category = category.name;
        b.height = spec.height;
        b.width = spec.width;
        b.label = anomalous[index] ? Label::kAnomalous : Label::kNormal;

        Rect rect{0, 0, 0, 0};
        if (anomalous[index]) {
          const int lo = spec.defect_min > 0 ? spec.defect_min : std::max(1, g / 4);
          const int hi = spec.defect_max > 0 ? spec.defect_max : std::max(lo, g / 2);
          std::uniform_int_distribution<int> extent(lo, hi);
          rect.rows = extent(rng);
          rect.cols = extent(rng);
          rect.r0 = std::uniform_int_distribution<int>(0, g - rect.rows)(rng);
          rect.c0 = std::uniform_int_distribution<int>(0, g - rect.cols)(rng);
        }

        std::vector<double> cls(spec.d_txt, 0.0);
        std::vector<double> padded(spec.d_img);
        for (int layer : kFeatureLayers) {
          PatchGrid grid{g, spec.d_img, std::vector<float>(static_cast<std::size_t>(cells) * spec.d_img)};
          const auto& q = rotations[layer];
          for (int cell = 0; cell < cells; ++cell) {
            const bool defect = rect.contains(cell / g, cell % g);
            const auto& base = defect ? anomaly_dir : normal_dir;
            for (int i = 0; i < spec.d_txt; ++i) padded[i] = base[i] + spec.patch_noise * gauss(rng);
            for (int i = spec.d_txt; i < spec.d_img; ++i) padded[i] = spec.nuisance_scale * gauss(rng);
            if (layer == kFeatureLayers.back()) {
              for (int i = 0; i < spec.d_txt; ++i) cls[i] += padded[i] / cells;
            }
            float* out = grid.values.data() + static_cast<std::size_t>(cell) * spec.d_img;
            for (int r = 0; r < spec.d_img; ++r) {
              double acc = 0.0;
              for (int c = 0; c < spec.d_img; ++c) acc += q[static_cast<std::size_t>(r) * spec.d_img + c] * padded[c];
              out[r] = static_cast<float>(acc);
            }
          }
          b.layers[layer] = std::move(grid);
        }
        b.cls = to_float(cls);

        ManifestEntry entry;
        entry.image_id = id;
        entry.category = category.name;
        entry.split = split;
        entry.label = b.label;
        entry.feature_path = category.name + "/" + to_string(split) + "/" + id + ".sclp";
        if (anomalous[index]) {
          Mask mask{spec.height, spec.width,
                    std::vector<std::uint8_t>(static_cast<std::size_t>(spec.height) * spec.width, 0)};
          const int ph = spec.height / g;
          const int pw = spec.width / g;
          for (int y = 0; y < spec.height; ++y) {
            for (int x = 0; x < spec.width; ++x) {
              mask.values[static_cast<std::size_t>(y) * spec.width + x] = rect.contains(y / ph, x / pw) ? 1 : 0;
            }
          }
          entry.mask_path = category.name + "/" + to_string(split) + "/" + id + "_mask.sclp";
          write_mask(mask, out_dir / *entry.mask_path);
        }
        write_feature_file(b, out_dir / entry.feature_path);
        manifest.entries.push_back(std::move(entry));
      }
    }
  }
  std::sort(manifest.entries.begin(), manifest.entries.end(), [](const auto& a, const auto& b) {
    return std::tie(a.category, a.split, a.image_id) < std::tie(b.category, b.split, b.image_id);
  });
  save_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace stackad
