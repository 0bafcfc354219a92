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

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace stackad {

// Encoder layers whose patch tokens are consumed downstream.
inline constexpr std::array<int, 4> kFeatureLayers{6, 12, 18, 24};

enum class Label : std::uint8_t { kNormal = 0, kAnomalous = 1 };
enum class Split : std::uint8_t { kTrain, kTest };

std::string to_string(Label label);
std::string to_string(Split split);
Label parse_label(std::string_view text);
Split parse_split(std::string_view text);

// G x G grid of D-dimensional patch tokens, row-major over (row, col, channel).
struct PatchGrid {
  int side = 0;
  int dim = 0;
  std::vector<float> values;

  int cells() const { return side * side; }
  std::span<const float> cell(int index) const {
    return {values.data() + static_cast<std::size_t>(index) * dim,
            static_cast<std::size_t>(dim)};
  }
};

// Binary {0,1} grid, row-major.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;
};

struct FeatureBundle {
  std::string image_id;
  std::string category;
  int height = 0;  // source image resolution
  int width = 0;
  std::map<int, PatchGrid> layers;
  std::vector<float> cls;
  Label label = Label::kNormal;
  std::optional<Mask> mask;

  int grid_side() const;
  int image_dim() const;
};

// Normal/abnormal embedding pair for one prompt key.
struct TextFeature {
  std::string prompt_key;
  std::vector<float> normal;
  std::vector<float> abnormal;
};

struct Dims {
  int d_img = 0;
  int d_txt = 0;
  int grid = 0;
  int height = 0;
  int width = 0;

  bool operator==(const Dims&) const = default;
};

struct ManifestEntry {
  std::string image_id;
  std::string category;
  Split split = Split::kTrain;
  std::string feature_path;  // relative to the feature root
  std::optional<std::string> mask_path;
  Label label = Label::kNormal;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  Dims dims;

  bool operator==(const DatasetManifest&) const = default;

  std::vector<const ManifestEntry*> split(Split which) const;
  // Distinct categories of a split, in first-appearance order.
  std::vector<std::string> categories(Split which) const;
};

// ---------------------------------------------------------------------------
// SCLP container
//
//   "SCLP" | u32 version (=1) | u32 header length | UTF-8 JSON header | payload
//
// The header lists tensors in payload order; every tensor is stored as
// contiguous little-endian data of its declared dtype ("f32le" or "u8").

inline constexpr std::uint32_t kSclpVersion = 1;

struct SclpTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::string dtype = "f32le";
  std::vector<float> f32;
  std::vector<std::uint8_t> u8;

  std::int64_t element_count() const;
};

struct SclpDocument {
  std::string kind;
  std::vector<std::string> ids;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<SclpTensor> tensors;

  const SclpTensor& tensor(std::string_view name) const;
  const SclpTensor* find(std::string_view name) const;
};

std::string encode_sclp(const SclpDocument& doc);
SclpDocument decode_sclp(std::string_view bytes);
void write_sclp(const SclpDocument& doc, const std::filesystem::path& path);
SclpDocument read_sclp(const std::filesystem::path& path);
// Parses only the magic, version and JSON header.
nlohmann::json read_sclp_header(const std::filesystem::path& path);

using FeatureFile = std::variant<FeatureBundle, std::vector<TextFeature>>;

void write_feature_file(const FeatureBundle& bundle, const std::filesystem::path& path);
void write_feature_file(std::span<const TextFeature> texts, const std::filesystem::path& path);
FeatureFile read_feature_file(const std::filesystem::path& path);

SclpDocument bundle_to_sclp(const FeatureBundle& bundle);
FeatureBundle bundle_from_sclp(const SclpDocument& doc);
SclpDocument texts_to_sclp(std::span<const TextFeature> texts);
std::vector<TextFeature> texts_from_sclp(const SclpDocument& doc);

FeatureBundle read_bundle(const std::filesystem::path& path);
std::vector<TextFeature> read_text_features(const std::filesystem::path& path);
std::map<std::string, TextFeature> index_by_key(std::vector<TextFeature> texts);

void write_mask(const Mask& mask, const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest

nlohmann::json manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const nlohmann::json& doc);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

// Directory feature paths are resolved against: $STACKAD_FEATURE_ROOT when
// set, otherwise the manifest's own directory.
std::filesystem::path feature_root_for(const std::filesystem::path& manifest_path);

// Checks id uniqueness, file presence and that every referenced file agrees
// with the manifest dims. Throws ValidationError / MissingInputError.
void validate_manifest(const DatasetManifest& manifest, const std::filesystem::path& root);

// Loads a bundle and attaches its manifest mask (if any).
FeatureBundle load_entry(const ManifestEntry& entry, const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Normalization

// Normalizes in place. Returns false (leaving zeros) for a zero vector.
bool normalize_in_place(std::span<double> v);

struct RowNormalization {
  std::vector<double> values;
  std::vector<bool> zero_rows;
};

RowNormalization l2_normalize(std::span<const double> rows, std::size_t cols);

std::vector<double> to_double(std::span<const float> v);
std::vector<float> to_float(std::span<const double> v);

}  // namespace stackad
