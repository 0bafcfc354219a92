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

#include "stackad/feature_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "stackad/error.hpp"

namespace stackad {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(Label label) {
  return label == Label::kAnomalous ? "anomalous" : "normal";
}

std::string to_string(Split split) { return split == Split::kTrain ? "train" : "test"; }

Label parse_label(std::string_view text) {
  if (text == "normal") return Label::kNormal;
  if (text == "anomalous") return Label::kAnomalous;
  throw ValidationError("unknown label '" + std::string(text) + "'");
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  throw ValidationError("unknown split '" + std::string(text) + "'");
}

int FeatureBundle::grid_side() const {
  return layers.empty() ? 0 : layers.begin()->second.side;
}

int FeatureBundle::image_dim() const {
  return layers.empty() ? 0 : layers.begin()->second.dim;
}

std::vector<const ManifestEntry*> DatasetManifest::split(Split which) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries) {
    if (e.split == which) out.push_back(&e);
  }
  return out;
}

std::vector<std::string> DatasetManifest::categories(Split which) const {
  std::vector<std::string> out;
  for (const auto& e : entries) {
    if (e.split == which && std::find(out.begin(), out.end(), e.category) == out.end()) {
      out.push_back(e.category);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Container

namespace {

constexpr char kMagic[4] = {'S', 'C', 'L', 'P'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32le") return 4;
  if (dtype == "u8") return 1;
  throw CodecError("unsupported dtype '" + dtype + "'");
}

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void check_finite(std::span<const float> v, const std::string& name) {
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericError("non-finite value in tensor '" + name + "'");
  }
}

}  // namespace

std::int64_t SclpTensor::element_count() const {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

const SclpTensor* SclpDocument::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

const SclpTensor& SclpDocument::tensor(std::string_view name) const {
  if (const auto* t = find(name)) return *t;
  throw CodecError("missing tensor '" + std::string(name) + "'");
}

std::string encode_sclp(const SclpDocument& doc) {
  json header;
  header["kind"] = doc.kind;
  header["dtype"] = "f32le";
  header["ids"] = doc.ids;
  header["meta"] = doc.meta;
  json entries = json::array();
  std::size_t payload_bytes = 0;
  for (const auto& t : doc.tensors) {
    for (auto d : t.shape) {
      if (d < 0) throw CodecError("negative extent in tensor '" + t.name + "'");
    }
    const auto n = static_cast<std::size_t>(t.element_count());
    const std::size_t stored = t.dtype == "u8" ? t.u8.size() : t.f32.size();
    dtype_size(t.dtype);
    if (stored != n) {
      throw CodecError("inconsistent shape for tensor '" + t.name + "': shape holds " +
                       std::to_string(n) + " elements, data has " + std::to_string(stored));
    }
    if (t.dtype == "f32le") check_finite(t.f32, t.name);
    entries.push_back({{"name", t.name}, {"shape", t.shape}, {"dtype", t.dtype}});
    payload_bytes += n * dtype_size(t.dtype);
  }
  header["tensors"] = entries;
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(12 + header_text.size() + payload_bytes);
  out.append(kMagic, 4);
  put_u32(out, kSclpVersion);
  put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& t : doc.tensors) {
    if (t.dtype == "u8") {
      out.append(reinterpret_cast<const char*>(t.u8.data()), t.u8.size());
    } else {
      for (float x : t.f32) put_u32(out, std::bit_cast<std::uint32_t>(x));
    }
  }
  return out;
}

namespace {

json parse_header(std::string_view bytes, std::size_t* payload_offset) {
  if (bytes.size() < 12) throw CodecError("truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CodecError("bad magic");
  const auto version = get_u32(bytes, 4);
  if (version != kSclpVersion) {
    throw CodecError("unsupported version " + std::to_string(version));
  }
  const auto len = get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw CodecError("truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(12, len));
  } catch (const json::exception& e) {
    throw CodecError(std::string("malformed JSON header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("tensors") || !header.contains("kind")) {
    throw CodecError("header lacks kind/tensors");
  }
  if (payload_offset != nullptr) *payload_offset = 12 + len;
  return header;
}

}  // namespace

SclpDocument decode_sclp(std::string_view bytes) {
  std::size_t offset = 0;
  const json header = parse_header(bytes, &offset);
  SclpDocument doc;
  try {
    doc.kind = header.at("kind").get<std::string>();
    doc.ids = header.value("ids", std::vector<std::string>{});
    doc.meta = header.value("meta", json::object());
    for (const auto& entry : header.at("tensors")) {
      SclpTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      t.dtype = entry.value("dtype", std::string("f32le"));
      doc.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw CodecError(std::string("malformed JSON header: ") + e.what());
  }

  for (auto& t : doc.tensors) {
    for (auto d : t.shape) {
      if (d < 0) throw CodecError("negative extent in tensor '" + t.name + "'");
    }
    const auto n = static_cast<std::size_t>(t.element_count());
    const std::size_t width = dtype_size(t.dtype);
    if (bytes.size() - offset < n * width) {
      throw CodecError("payload underrun in tensor '" + t.name + "'");
    }
    if (t.dtype == "u8") {
      t.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset),
                  bytes.begin() + static_cast<std::ptrdiff_t>(offset + n));
    } else {
      t.f32.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        t.f32[i] = std::bit_cast<float>(get_u32(bytes, offset + 4 * i));
      }
      check_finite(t.f32, t.name);
    }
    offset += n * width;
  }
  if (offset != bytes.size()) throw CodecError("payload overrun: trailing bytes after last tensor");
  return doc;
}

void write_sclp(const SclpDocument& doc, const fs::path& path) {
  const std::string bytes = encode_sclp(doc);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ValidationError("write failed for '" + path.string() + "'");
}

SclpDocument read_sclp(const fs::path& path) {
  try {
    return decode_sclp(read_file_bytes(path));
  } catch (const CodecError& e) {
    throw CodecError(path.string() + ": " + e.what());
  }
}

json read_sclp_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open '" + path.string() + "'");
  std::string prefix(12, '\0');
  in.read(prefix.data(), 12);
  prefix.resize(static_cast<std::size_t>(in.gcount()));
  if (prefix.size() < 12) throw CodecError(path.string() + ": truncated header");
  const auto len = get_u32(prefix, 8);
  std::string rest(len, '\0');
  in.read(rest.data(), len);
  rest.resize(static_cast<std::size_t>(in.gcount()));
  try {
    return parse_header(prefix + rest, nullptr);
  } catch (const CodecError& e) {
    throw CodecError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Typed views

namespace {

std::string layer_tensor_name(int layer) { return "layer" + std::to_string(layer); }

}  // namespace

SclpDocument bundle_to_sclp(const FeatureBundle& bundle) {
  for (int layer : kFeatureLayers) {
    if (!bundle.layers.contains(layer)) {
      throw CodecError("missing layer " + std::to_string(layer) + " in bundle '" +
                       bundle.image_id + "'");
    }
  }
  if (bundle.layers.size() != kFeatureLayers.size()) {
    throw CodecError("unexpected layer set in bundle '" + bundle.image_id + "'");
  }
  const int side = bundle.grid_side();
  const int dim = bundle.image_dim();
  SclpDocument doc;
  doc.kind = "bundle";
  doc.ids = {bundle.image_id};
  doc.meta = {{"image_id", bundle.image_id},
              {"category", bundle.category},
              {"label", to_string(bundle.label)},
              {"height", bundle.height},
              {"width", bundle.width},
              {"grid", side},
              {"d_img", dim},
              {"d_txt", static_cast<int>(bundle.cls.size())},
              {"layers", kFeatureLayers}};
  for (const auto& [layer, grid] : bundle.layers) {
    if (grid.side != side || grid.dim != dim) {
      throw CodecError("inconsistent shape for tensor '" + layer_tensor_name(layer) + "'");
    }
    SclpTensor t;
    t.name = layer_tensor_name(layer);
    t.shape = {side, side, dim};
    t.f32 = grid.values;
    doc.tensors.push_back(std::move(t));
  }
  if (bundle.cls.empty()) throw CodecError("inconsistent shape for tensor 'cls': empty");
  SclpTensor cls;
  cls.name = "cls";
  cls.shape = {static_cast<std::int64_t>(bundle.cls.size())};
  cls.f32 = bundle.cls;
  doc.tensors.push_back(std::move(cls));
  if (bundle.mask) {
    const Mask& m = *bundle.mask;
    for (auto v : m.values) {
      if (v > 1) throw CodecError("mask values must be 0 or 1");
    }
    SclpTensor t;
    t.name = "mask";
    t.dtype = "u8";
    t.shape = {m.height, m.width};
    t.u8 = m.values;
    doc.tensors.push_back(std::move(t));
  }
  return doc;
}

FeatureBundle bundle_from_sclp(const SclpDocument& doc) {
  if (doc.kind != "bundle") throw CodecError("expected kind 'bundle', got '" + doc.kind + "'");
  FeatureBundle b;
  try {
    b.image_id = doc.meta.at("image_id").get<std::string>();
    b.category = doc.meta.at("category").get<std::string>();
    b.label = parse_label(doc.meta.at("label").get<std::string>());
    b.height = doc.meta.at("height").get<int>();
    b.width = doc.meta.at("width").get<int>();
  } catch (const json::exception& e) {
    throw CodecError(std::string("bundle header: ") + e.what());
  }
  int side = -1;
  int dim = -1;
  for (int layer : kFeatureLayers) {
    const auto* t = doc.find(layer_tensor_name(layer));
    if (t == nullptr) throw CodecError("missing layer " + std::to_string(layer));
    if (t->shape.size() != 3 || t->shape[0] != t->shape[1] || t->dtype != "f32le") {
      throw CodecError("inconsistent shape for tensor '" + t->name + "'");
    }
    if (side < 0) {
      side = static_cast<int>(t->shape[0]);
      dim = static_cast<int>(t->shape[2]);
    } else if (t->shape[0] != side || t->shape[2] != dim) {
      throw CodecError("inconsistent shape for tensor '" + t->name + "'");
    }
    b.layers[layer] = PatchGrid{side, dim, t->f32};
  }
  const auto& cls = doc.tensor("cls");
  if (cls.shape.size() != 1) throw CodecError("inconsistent shape for tensor 'cls'");
  b.cls = cls.f32;
  if (const auto* m = doc.find("mask")) {
    if (m->shape.size() != 2 || m->dtype != "u8") {
      throw CodecError("inconsistent shape for tensor 'mask'");
    }
    b.mask = Mask{static_cast<int>(m->shape[0]), static_cast<int>(m->shape[1]), m->u8};
  }
  return b;
}

SclpDocument texts_to_sclp(std::span<const TextFeature> texts) {
  SclpDocument doc;
  doc.kind = "text";
  std::size_t dim = texts.empty() ? 0 : texts.front().normal.size();
  for (const auto& t : texts) {
    if (t.normal.size() != dim || t.abnormal.size() != dim || dim == 0) {
      throw CodecError("inconsistent shape for text feature '" + t.prompt_key + "'");
    }
    doc.ids.push_back(t.prompt_key);
    for (const auto* channel : {&t.normal, &t.abnormal}) {
      SclpTensor tensor;
      tensor.name = t.prompt_key + (channel == &t.normal ? "/normal" : "/abnormal");
      tensor.shape = {static_cast<std::int64_t>(dim)};
      tensor.f32 = *channel;
      doc.tensors.push_back(std::move(tensor));
    }
  }
  doc.meta = {{"d_txt", dim}, {"count", texts.size()}};
  return doc;
}

std::vector<TextFeature> texts_from_sclp(const SclpDocument& doc) {
  if (doc.kind != "text") throw CodecError("expected kind 'text', got '" + doc.kind + "'");
  std::vector<TextFeature> out;
  std::size_t dim = 0;
  for (const auto& key : doc.ids) {
    TextFeature t;
    t.prompt_key = key;
    t.normal = doc.tensor(key + "/normal").f32;
    t.abnormal = doc.tensor(key + "/abnormal").f32;
    if (dim == 0) dim = t.normal.size();
    if (t.normal.size() != dim || t.abnormal.size() != dim) {
      throw CodecError("inconsistent shape for text feature '" + key + "'");
    }
    out.push_back(std::move(t));
  }
  return out;
}

void write_feature_file(const FeatureBundle& bundle, const fs::path& path) {
  write_sclp(bundle_to_sclp(bundle), path);
}

void write_feature_file(std::span<const TextFeature> texts, const fs::path& path) {
  write_sclp(texts_to_sclp(texts), path);
}

FeatureFile read_feature_file(const fs::path& path) {
  auto doc = read_sclp(path);
  if (doc.kind == "bundle") return bundle_from_sclp(doc);
  if (doc.kind == "text") return texts_from_sclp(doc);
  throw CodecError(path.string() + ": kind '" + doc.kind + "' is not a feature file");
}

FeatureBundle read_bundle(const fs::path& path) {
  auto file = read_feature_file(path);
  if (auto* b = std::get_if<FeatureBundle>(&file)) return std::move(*b);
  throw CodecError(path.string() + ": expected an image bundle");
}

std::vector<TextFeature> read_text_features(const fs::path& path) {
  auto file = read_feature_file(path);
  if (auto* t = std::get_if<std::vector<TextFeature>>(&file)) return std::move(*t);
  throw CodecError(path.string() + ": expected text features");
}

std::map<std::string, TextFeature> index_by_key(std::vector<TextFeature> texts) {
  std::map<std::string, TextFeature> out;
  for (auto& t : texts) {
    auto key = t.prompt_key;
    out.emplace(std::move(key), std::move(t));
  }
  return out;
}

void write_mask(const Mask& mask, const fs::path& path) {
  if (mask.values.size() != static_cast<std::size_t>(mask.height) * mask.width) {
    throw CodecError("inconsistent shape for tensor 'mask'");
  }
  SclpDocument doc;
  doc.kind = "mask";
  doc.meta = {{"height", mask.height}, {"width", mask.width}};
  SclpTensor t;
  t.name = "mask";
  t.dtype = "u8";
  t.shape = {mask.height, mask.width};
  t.u8 = mask.values;
  for (auto v : t.u8) {
    if (v > 1) throw CodecError("mask values must be 0 or 1");
  }
  doc.tensors.push_back(std::move(t));
  write_sclp(doc, path);
}

Mask read_mask(const fs::path& path) {
  const auto doc = read_sclp(path);
  if (doc.kind != "mask") throw CodecError(path.string() + ": expected kind 'mask'");
  const auto& t = doc.tensor("mask");
  if (t.shape.size() != 2 || t.dtype != "u8") throw CodecError("inconsistent shape for tensor 'mask'");
  for (auto v : t.u8) {
    if (v > 1) throw CodecError(path.string() + ": mask values must be 0 or 1");
  }
  return Mask{static_cast<int>(t.shape[0]), static_cast<int>(t.shape[1]), t.u8};
}

// ---------------------------------------------------------------------------
// Manifest

json manifest_to_json(const DatasetManifest& manifest) {
  json entries = json::array();
  for (const auto& e : manifest.entries) {
    json j = {{"image_id", e.image_id},
              {"category", e.category},
              {"split", to_string(e.split)},
              {"feature_path", e.feature_path},
              {"label", to_string(e.label)}};
    if (e.mask_path) j["mask_path"] = *e.mask_path;
    entries.push_back(std::move(j));
  }
  const auto& d = manifest.dims;
  return {{"dims", {{"D_img", d.d_img}, {"D_txt", d.d_txt}, {"G", d.grid}, {"H", d.height}, {"W", d.width}}},
          {"entries", entries}};
}

DatasetManifest manifest_from_json(const json& doc) {
  DatasetManifest m;
  try {
    const auto& d = doc.at("dims");
    m.dims = Dims{d.at("D_img").get<int>(), d.at("D_txt").get<int>(), d.at("G").get<int>(),
                  d.at("H").get<int>(), d.at("W").get<int>()};
    for (const auto& j : doc.at("entries")) {
      ManifestEntry e;
      e.image_id = j.at("image_id").get<std::string>();
      e.category = j.at("category").get<std::string>();
      e.split = parse_split(j.at("split").get<std::string>());
      e.feature_path = j.at("feature_path").get<std::string>();
      if (j.contains("mask_path")) e.mask_path = j.at("mask_path").get<std::string>();
      e.label = parse_label(j.at("label").get<std::string>());
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("manifest: ") + e.what());
  }
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << manifest_to_json(manifest).dump(2) << '\n';
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("manifest not found: '" + path.string() + "'");
  try {
    return manifest_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw ValidationError("manifest '" + path.string() + "': " + e.what());
  }
}

fs::path feature_root_for(const fs::path& manifest_path) {
  if (const char* env = std::getenv("STACKAD_FEATURE_ROOT"); env != nullptr && *env != '\0') {
    return fs::path(env);
  }
  return manifest_path.has_parent_path() ? manifest_path.parent_path() : fs::path(".");
}

void validate_manifest(const DatasetManifest& manifest, const fs::path& root) {
  std::set<std::string> ids;
  const Dims& d = manifest.dims;
  for (const auto& e : manifest.entries) {
    if (!ids.insert(e.image_id).second) {
      throw ValidationError("duplicate image_id '" + e.image_id + "'");
    }
    const fs::path path = root / e.feature_path;
    if (!fs::exists(path)) throw MissingInputError("feature file missing: '" + path.string() + "'");
    const json header = read_sclp_header(path);
    const json& meta = header.at("meta");
    const Dims file_dims{meta.value("d_img", -1), meta.value("d_txt", -1), meta.value("grid", -1),
                         meta.value("height", -1), meta.value("width", -1)};
    if (file_dims != d) {
      throw ValidationError("dims mismatch between manifest and '" + path.string() + "'");
    }
    if (e.split == Split::kTrain && e.label == Label::kAnomalous && !e.mask_path) {
      throw ValidationError("anomalous training image '" + e.image_id + "' has no mask");
    }
    if (e.mask_path) {
      const fs::path mpath = root / *e.mask_path;
      if (!fs::exists(mpath)) throw MissingInputError("mask file missing: '" + mpath.string() + "'");
      const json mh = read_sclp_header(mpath);
      const auto& shape = mh.at("tensors").at(0).at("shape");
      if (shape.at(0).get<int>() != d.height || shape.at(1).get<int>() != d.width) {
        throw ValidationError("dims mismatch between manifest and '" + mpath.string() + "'");
      }
    }
  }
}

FeatureBundle load_entry(const ManifestEntry& entry, const fs::path& root) {
  FeatureBundle b = read_bundle(root / entry.feature_path);
  if (entry.mask_path) b.mask = read_mask(root / *entry.mask_path);
  b.label = entry.label;
  return b;
}

// ---------------------------------------------------------------------------

bool normalize_in_place(std::span<double> v) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0) return false;
  const double inv = 1.0 / std::sqrt(sq);
  for (double& x : v) x *= inv;
  return true;
}

RowNormalization l2_normalize(std::span<const double> rows, std::size_t cols) {
  RowNormalization out;
  out.values.assign(rows.begin(), rows.end());
  const std::size_t n = cols == 0 ? 0 : rows.size() / cols;
  out.zero_rows.assign(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<double> row(out.values.data() + i * cols, cols);
    out.zero_rows[i] = !normalize_in_place(row);
  }
  return out;
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

std::vector<float> to_float(std::span<const double> v) {
  std::vector<float> out(v.size());
  std::transform(v.begin(), v.end(), out.begin(), [](double x) { return static_cast<float>(x); });
  return out;
}

}  // namespace stackad
