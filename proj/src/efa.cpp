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

#include "stackad/efa.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "stackad/error.hpp"
#include "stackad/kernels.hpp"
#include "stackad/mock.hpp"

namespace stackad {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainConfig::validate() const {
  if (!(gamma >= 0.0)) throw ValidationError("train: gamma must be >= 0");
  if (!(epsilon > 0.0)) throw ValidationError("train: epsilon must be > 0");
  if (!(logit_scale > 0.0)) throw ValidationError("train: logit_scale must be > 0");
  if (!(lr >= 0.0)) throw ValidationError("train: lr must be >= 0");
  if (epochs < 0 || batch_size < 1) throw ValidationError("train: epochs >= 0 and batch_size >= 1 required");
  if (layers.empty()) throw ValidationError("train: no layers selected");
  for (int l : layers) {
    if (std::find(kFeatureLayers.begin(), kFeatureLayers.end(), l) == kFeatureLayers.end()) {
      throw ValidationError("train: unknown layer " + std::to_string(l));
    }
  }
}

json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"gamma", c.gamma},
          {"epsilon", c.epsilon},
          {"logit_scale", c.logit_scale},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"seed", c.seed},
          {"layers", c.layers}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  try {
    c.alpha = j.at("alpha").get<double>();
    c.gamma = j.at("gamma").get<double>();
    c.epsilon = j.at("epsilon").get<double>();
    c.logit_scale = j.at("logit_scale").get<double>();
    c.lr = j.at("lr").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    const auto& a = j.at("adam");
    c.adam = AdamConfig{a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>()};
    c.seed = j.at("seed").get<std::uint64_t>();
    c.layers = j.at("layers").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

ProjectionHead init_head(int cluster, int layer, int d_txt, int d_img, std::uint64_t seed) {
  ProjectionHead h;
  h.cluster = cluster;
  h.layer = layer;
  h.d_txt = d_txt;
  h.d_img = d_img;
  h.weight.resize(static_cast<std::size_t>(d_txt) * d_img);
  h.bias.assign(static_cast<std::size_t>(d_txt), 0.0);
  const double bound = 1.0 / std::sqrt(static_cast<double>(d_img));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-bound, bound);
  for (double& w : h.weight) w = uni(rng);
  return h;
}

const ProjectionHead& HeadBank::head(int cluster, int layer) const {
  auto it = heads.find({cluster, layer});
  if (it == heads.end()) {
    throw ValidationError("head bank has no head for cluster " + std::to_string(cluster) + ", layer " +
                          std::to_string(layer));
  }
  return it->second;
}

namespace {

std::string head_name(int cluster, int layer, const char* part) {
  return "c" + std::to_string(cluster) + "/l" + std::to_string(layer) + "/" + part;
}

}  // namespace

void save_head_bank(const HeadBank& bank, const fs::path& path) {
  if (bank.heads.empty()) throw ValidationError("empty head bank");
  const auto& first = bank.heads.begin()->second;
  SclpDocument doc;
  doc.kind = "headbank";
  doc.meta = {{"n_clusters", bank.n_clusters},
              {"layers", bank.layers},
              {"d_txt", first.d_txt},
              {"d_img", first.d_img},
              {"cluster_model_sha256", bank.cluster_model_sha256},
              {"train_config", bank.train_config}};
  for (const auto& [key, head] : bank.heads) {
    if (head.d_txt != first.d_txt || head.d_img != first.d_img) {
      throw CodecError("inconsistent head shapes in bank");
    }
    doc.ids.push_back(head_name(key.first, key.second, ""));
    SclpTensor w;
    w.name = head_name(key.first, key.second, "weight");
    w.shape = {head.d_txt, head.d_img};
    w.f32 = to_float(head.weight);
    SclpTensor b;
    b.name = head_name(key.first, key.second, "bias");
    b.shape = {head.d_txt};
    b.f32 = to_float(head.bias);
    doc.tensors.push_back(std::move(w));
    doc.tensors.push_back(std::move(b));
  }
  write_sclp(doc, path);
}

HeadBank load_head_bank(const fs::path& path) {
  const auto doc = read_sclp(path);
  if (doc.kind != "headbank") throw CodecError(path.string() + ": expected kind 'headbank'");
  HeadBank bank;
  try {
    bank.n_clusters = doc.meta.at("n_clusters").get<int>();
    bank.layers = doc.meta.at("layers").get<std::vector<int>>();
    bank.cluster_model_sha256 = doc.meta.at("cluster_model_sha256").get<std::string>();
    bank.train_config = doc.meta.at("train_config");
    const int d_txt = doc.meta.at("d_txt").get<int>();
    const int d_img = doc.meta.at("d_img").get<int>();
    for (int c = 0; c < bank.n_clusters; ++c) {
      for (int l : bank.layers) {
        ProjectionHead h;
        h.cluster = c;
        h.layer = l;
        h.d_txt = d_txt;
        h.d_img = d_img;
        const auto& w = doc.tensor(head_name(c, l, "weight"));
        const auto& b = doc.tensor(head_name(c, l, "bias"));
        if (w.shape != std::vector<std::int64_t>{d_txt, d_img} || b.shape != std::vector<std::int64_t>{d_txt}) {
          throw CodecError("inconsistent shape for head " + head_name(c, l, ""));
        }
        h.weight = to_double(w.f32);
        h.bias = to_double(b.f32);
        bank.heads[{c, l}] = std::move(h);
      }
    }
  } catch (const json::exception& e) {
    throw CodecError(path.string() + ": " + e.what());
  }
  return bank;
}

// ---------------------------------------------------------------------------

std::vector<double> project(const ProjectionHead& head, const PatchGrid& patches) {
  if (patches.dim != head.d_img) {
    throw ValidationError("project: patch dim " + std::to_string(patches.dim) + " != head input dim " +
                          std::to_string(head.d_img));
  }
  std::vector<double> out(static_cast<std::size_t>(patches.cells()) * head.d_txt);
  kernels::project(head.weight, head.bias, head.d_txt, head.d_img, patches.values, out);
  return out;
}

namespace {

std::pair<std::vector<double>, std::vector<double>> unit_text(const TextFeature& text) {
  auto n = to_double(text.normal);
  auto a = to_double(text.abnormal);
  if (!normalize_in_place(n) || !normalize_in_place(a)) {
    throw NumericError("zero text embedding for '" + text.prompt_key + "'");
  }
  return {std::move(n), std::move(a)};
}

}  // namespace

AnomalyMap anomaly_map(std::span<const double> projected, int side, const TextFeature& text, double logit_scale,
                       int* degenerate) {
  const int d_txt = static_cast<int>(text.normal.size());
  if (projected.size() != static_cast<std::size_t>(side) * side * d_txt) {
    throw ValidationError("anomaly_map: projected grid does not match text dimension");
  }
  const auto [tn, ta] = unit_text(text);
  AnomalyMap map{side, side, std::vector<double>(static_cast<std::size_t>(side) * side)};
  const int zeros = kernels::cosine_softmax(projected, d_txt, tn, ta, logit_scale, map.values);
  if (degenerate != nullptr) *degenerate += zeros;
  return map;
}

AnomalyMap upsample(const AnomalyMap& map, int height, int width) {
  if (map.rows < 1 || map.cols < 1) throw ValidationError("upsample: empty map");
  AnomalyMap out{height, width, std::vector<double>(static_cast<std::size_t>(height) * width)};
  const double sy = height > 1 ? static_cast<double>(map.rows - 1) / (height - 1) : 0.0;
  const double sx = width > 1 ? static_cast<double>(map.cols - 1) / (width - 1) : 0.0;
  for (int y = 0; y < height; ++y) {
    const double fy = y * sy;
    const int y0 = std::min(static_cast<int>(fy), map.rows - 1);
    const int y1 = std::min(y0 + 1, map.rows - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = x * sx;
      const int x0 = std::min(static_cast<int>(fx), map.cols - 1);
      const int x1 = std::min(x0 + 1, map.cols - 1);
      const double wx = fx - x0;
      const double top = map.at(y0, x0) + wx * (map.at(y0, x1) - map.at(y0, x0));
      const double bottom = map.at(y1, x0) + wx * (map.at(y1, x1) - map.at(y1, x0));
      out.values[static_cast<std::size_t>(y) * width + x] = top + wy * (bottom - top);
    }
  }
  return out;
}

AnomalyMap gaussian_smooth(const AnomalyMap& map, double sigma) {
  if (sigma <= 0.0) return map;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double total = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  for (double& k : kernel) k /= total;
  auto reflect = [](int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  AnomalyMap tmp = map;
  AnomalyMap out = map;
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * map.at(r, reflect(c + k, map.cols));
      tmp.values[static_cast<std::size_t>(r) * map.cols + c] = acc;
    }
  }
  for (int r = 0; r < map.rows; ++r) {
    for (int c = 0; c < map.cols; ++c) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(reflect(r + k, map.rows), c);
      out.values[static_cast<std::size_t>(r) * map.cols + c] = acc;
    }
  }
  return out;
}

std::vector<std::uint8_t> downsample_mask(const Mask& mask, int side) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(side) * side, 0);
  for (int i = 0; i < side; ++i) {
    const int r0 = i * mask.height / side;
    const int r1 = std::max(r0 + 1, (i + 1) * mask.height / side);
    for (int j = 0; j < side; ++j) {
      const int c0 = j * mask.width / side;
      const int c1 = std::max(c0 + 1, (j + 1) * mask.width / side);
      std::uint8_t v = 0;
      for (int r = r0; r < r1 && r < mask.height && v == 0; ++r) {
        for (int c = c0; c < c1 && c < mask.width; ++c) {
          if (mask.values[static_cast<std::size_t>(r) * mask.width + c] != 0) {
            v = 1;
            break;
          }
        }
      }
      out[static_cast<std::size_t>(i) * side + j] = v;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

void check_same_shape(const AnomalyMap& map, std::span<const std::uint8_t> gt, const char* who) {
  if (gt.size() != map.values.size()) {
    throw ValidationError(std::string(who) + ": map has " + std::to_string(map.values.size()) +
                          " cells, ground truth " + std::to_string(gt.size()));
  }
}

double clamp_probability(double m) { return std::clamp(m, kProbabilityClamp, 1.0 - kProbabilityClamp); }

bool is_clamped(double m) { return m < kProbabilityClamp || m > 1.0 - kProbabilityClamp; }

double focal_term(double m, bool positive, double alpha, double gamma) {
  const double mc = clamp_probability(m);
  if (positive) return -alpha * std::pow(1.0 - mc, gamma) * std::log(mc);
  return -(1.0 - alpha) * std::pow(mc, gamma) * std::log(1.0 - mc);
}

// d focal_term / dm, zero inside the clamped region.
double focal_term_grad(double m, bool positive, double alpha, double gamma) {
  if (is_clamped(m)) return 0.0;
  if (positive) {
    const double q = 1.0 - m;
    const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(q, gamma - 1.0) * std::log(m);
    return -alpha * (-lead + std::pow(q, gamma) / m);
  }
  const double lead = gamma == 0.0 ? 0.0 : gamma * std::pow(m, gamma - 1.0) * std::log(1.0 - m);
  return -(1.0 - alpha) * (lead - std::pow(m, gamma) / (1.0 - m));
}

}  // namespace

double focal_loss(const AnomalyMap& map, std::span<const std::uint8_t> gt, double alpha, double gamma) {
  check_same_shape(map, gt, "focal_loss");
  double total = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) total += focal_term(map.values[i], gt[i] != 0, alpha, gamma);
  return total / static_cast<double>(gt.size());
}

double dice_loss(const AnomalyMap& map, std::span<const std::uint8_t> gt, double epsilon) {
  check_same_shape(map, gt, "dice_loss");
  double inter = 0.0;
  double sum_m = 0.0;
  double sum_g = 0.0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    inter += map.values[i] * gt[i];
    sum_m += map.values[i];
    sum_g += gt[i];
  }
  return 1.0 - (2.0 * inter + epsilon) / (sum_m + sum_g + epsilon);
}

SegLossGrad seg_loss_and_grad(const ProjectionHead& head, std::span<const SegSample> batch, const TextFeature& text,
                              const TrainConfig& cfg) {
  if (batch.empty()) throw ValidationError("seg_loss_and_grad: empty batch");
  if (static_cast<int>(text.normal.size()) != head.d_txt) {
    throw ValidationError("seg_loss_and_grad: text dim does not match head output dim");
  }
  const auto [tn, ta] = unit_text(text);
  const int d_txt = head.d_txt;
  const int d_img = head.d_img;
  std::vector<double> direction(d_txt);
  for (int r = 0; r < d_txt; ++r) direction[r] = ta[r] - tn[r];

  SegLossGrad out;
  out.d_weight.assign(head.weight.size(), 0.0);
  out.d_bias.assign(head.bias.size(), 0.0);
  const double inv_batch = 1.0 / static_cast<double>(batch.size());

  std::vector<double> g_p(d_txt);
  for (const auto& sample : batch) {
    const PatchGrid& grid = *sample.patches;
    const int cells = grid.cells();
    if (sample.gt.size() != static_cast<std::size_t>(cells)) {
      throw ValidationError("seg_loss_and_grad: ground truth is not at patch resolution");
    }
    const auto projected = project(head, grid);

    std::vector<double> m(cells);
    std::vector<double> norms(cells);
    for (int c = 0; c < cells; ++c) {
      const double* p = projected.data() + static_cast<std::size_t>(c) * d_txt;
      double sq = 0.0;
      double z = 0.0;
      for (int r = 0; r < d_txt; ++r) {
        sq += p[r] * p[r];
        z += p[r] * direction[r];
      }
      norms[c] = std::sqrt(sq);
      if (sq == 0.0) {
        m[c] = 0.5;
        ++out.degenerate;
      } else {
        m[c] = kernels::sigmoid(cfg.logit_scale * z / norms[c]);
      }
    }

    double focal = 0.0;
    double inter = 0.0;
    double sum_m = 0.0;
    double sum_g = 0.0;
    for (int c = 0; c < cells; ++c) {
      const bool pos = sample.gt[c] != 0;
      focal += focal_term(m[c], pos, cfg.alpha, cfg.gamma);
      inter += m[c] * (pos ? 1.0 : 0.0);
      sum_m += m[c];
      sum_g += pos ? 1.0 : 0.0;
    }
    focal /= cells;
    const double denom = sum_m + sum_g + cfg.epsilon;
    const double numer = 2.0 * inter + cfg.epsilon;
    out.loss += (focal + 1.0 - numer / denom) * inv_batch;

    for (int c = 0; c < cells; ++c) {
      if (norms[c] == 0.0) continue;
      const bool pos = sample.gt[c] != 0;
      const double d_focal = focal_term_grad(m[c], pos, cfg.alpha, cfg.gamma) / cells;
      const double d_dice = -(2.0 * (pos ? 1.0 : 0.0) * denom - numer) / (denom * denom);
      const double g_z = (d_focal + d_dice) * m[c] * (1.0 - m[c]) * cfg.logit_scale;
      // z = u . direction with u = p / |p|; dz/dp = (direction - u (u . direction)) / |p|.
      const double* p = projected.data() + static_cast<std::size_t>(c) * d_txt;
      const double inv_norm = 1.0 / norms[c];
      double u_dot_dir = 0.0;
      for (int r = 0; r < d_txt; ++r) u_dot_dir += p[r] * inv_norm * direction[r];
      for (int r = 0; r < d_txt; ++r) {
        g_p[r] = g_z * (direction[r] - p[r] * inv_norm * u_dot_dir) * inv_norm * inv_batch;
      }
      const auto h = grid.cell(c);
      for (int r = 0; r < d_txt; ++r) {
        out.d_bias[r] += g_p[r];
        double* row = out.d_weight.data() + static_cast<std::size_t>(r) * d_img;
        for (int k = 0; k < d_img; ++k) row[k] += g_p[r] * static_cast<double>(h[k]);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

TrainResult train_heads(std::span<const FeatureBundle> images, const ClusterModel& model,
                        const std::map<std::string, TextFeature>& texts, const TrainConfig& cfg) {
  cfg.validate();
  if (images.empty()) throw ValidationError("train: no training images");
  const int n = model.n_star;
  const int d_img = images.front().image_dim();
  const int d_txt = static_cast<int>(images.front().cls.size());
  const int side = images.front().grid_side();

  std::vector<std::vector<std::size_t>> members(n);
  std::vector<std::vector<std::uint8_t>> targets(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    if (img.image_dim() != d_img || img.grid_side() != side) {
      throw ValidationError("train: image '" + img.image_id + "' has inconsistent dims");
    }
    members[model.cluster_of(img.category)].push_back(i);
    if (img.mask) {
      targets[i] = downsample_mask(*img.mask, side);
    } else if (img.label == Label::kAnomalous) {
      throw MissingInputError("train: anomalous image '" + img.image_id + "' has no mask");
    } else {
      targets[i].assign(static_cast<std::size_t>(side) * side, 0);
    }
  }
  std::vector<const TextFeature*> cluster_text(n);
  for (int c = 0; c < n; ++c) {
    if (members[c].empty()) throw ValidationError("train: cluster " + std::to_string(c) + " has no images");
    const auto& key = model.stacked_prompt_keys[static_cast<std::size_t>(c)];
    auto it = texts.find(key);
    if (it == texts.end()) throw MissingInputError("missing text embedding for prompt key '" + key + "'");
    if (static_cast<int>(it->second.normal.size()) != d_txt) {
      throw ValidationError("train: text dim for '" + key + "' does not match CLS dim");
    }
    cluster_text[c] = &it->second;
  }

  std::vector<std::pair<int, int>> jobs;
  for (int c = 0; c < n; ++c) {
    for (int l : cfg.layers) jobs.emplace_back(c, l);
  }
  std::vector<ProjectionHead> trained(jobs.size());
  std::vector<std::vector<LossRecord>> curves(jobs.size());

#pragma omp parallel for schedule(dynamic)
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto [c, layer] = jobs[j];
    ProjectionHead head = init_head(c, layer, d_txt, d_img, mix_seed(cfg.seed, static_cast<std::uint64_t>(c * 1000 + layer)));
    AdamState w_state(head.weight.size());
    AdamState b_state(head.bias.size());
    std::vector<std::size_t> order = members[c];
    std::mt19937_64 shuffler(mix_seed(cfg.seed, 0x5EED0000ull + static_cast<std::uint64_t>(c)));
    int step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), shuffler);
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
        std::vector<SegSample> batch;
        for (std::size_t k = start; k < stop; ++k) {
          const auto idx = order[k];
          batch.push_back({&images[idx].layers.at(layer), targets[idx]});
        }
        const auto result = seg_loss_and_grad(head, batch, *cluster_text[c], cfg);
        adam_step(w_state, head.weight, result.d_weight, cfg.lr, cfg.adam);
        adam_step(b_state, head.bias, result.d_bias, cfg.lr, cfg.adam);
        curves[j].push_back({epoch, step++, c, layer, result.loss});
      }
    }
    trained[j] = std::move(head);
  }

  TrainResult out;
  out.bank.n_clusters = n;
  out.bank.layers = cfg.layers;
  out.bank.cluster_model_sha256 = cluster_model_digest(model);
  out.bank.train_config = to_json(cfg);
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    out.bank.heads[jobs[j]] = std::move(trained[j]);
    out.curve.insert(out.curve.end(), curves[j].begin(), curves[j].end());
  }
  return out;
}

void write_loss_csv(const std::vector<LossRecord>& curve, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << "epoch,step,cluster,layer,loss\n" << std::setprecision(17);
  for (const auto& r : curve) {
    out << r.epoch << ',' << r.step << ',' << r.cluster << ',' << r.layer << ',' << r.loss << '\n';
  }
}

// ---------------------------------------------------------------------------
// Inference

std::vector<double> attention_weights(std::span<const float> cls, const std::vector<TextFeature>& cluster_texts,
                                      bool* degenerate) {
  if (cluster_texts.empty()) throw ValidationError("attention_weights: no clusters");
  for (float x : cls) {
    if (!std::isfinite(x)) throw NumericError("attention_weights: non-finite CLS");
  }
  const std::size_t n = cluster_texts.size();
  auto c = to_double(cls);
  if (!normalize_in_place(c)) {
    if (degenerate != nullptr) *degenerate = true;
    return std::vector<double>(n, 1.0 / static_cast<double>(n));
  }
  if (degenerate != nullptr) *degenerate = false;
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = cluster_texts[i];
    if (t.normal.size() != c.size()) throw ValidationError("attention_weights: text dim does not match CLS dim");
    std::vector<double> mean(c.size());
    for (std::size_t k = 0; k < c.size(); ++k) {
      mean[k] = static_cast<double>(t.normal[k]) + static_cast<double>(t.abnormal[k]);
    }
    if (!normalize_in_place(mean)) throw NumericError("attention_weights: zero text for '" + t.prompt_key + "'");
    logits[i] = dot(c, mean);
  }
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double& l : logits) {
    l = std::exp(l - top);
    total += l;
  }
  for (double& l : logits) l /= total;
  return logits;
}

InferResult infer(const FeatureBundle& bundle, const HeadBank& bank, const std::vector<TextFeature>& test_texts,
                  const InferConfig& cfg) {
  if (static_cast<int>(test_texts.size()) != bank.n_clusters) {
    throw ValidationError("infer: cluster-count mismatch (" + std::to_string(test_texts.size()) + " prompt sets, " +
                          std::to_string(bank.n_clusters) + " clusters)");
  }
  if (cfg.layers.empty()) throw ValidationError("infer: no layers selected");
  InferResult out;
  bool zero_cls = false;
  out.weights = attention_weights(bundle.cls, test_texts, &zero_cls);
  if (zero_cls) ++out.degenerate;

  const int side = bundle.grid_side();
  AnomalyMap fused{side, side, std::vector<double>(static_cast<std::size_t>(side) * side, 0.0)};
  const double layer_weight = 1.0 / static_cast<double>(cfg.layers.size());
  for (int layer : cfg.layers) {
    auto it = bundle.layers.find(layer);
    if (it == bundle.layers.end()) throw ValidationError("infer: bundle lacks layer " + std::to_string(layer));
    for (int c = 0; c < bank.n_clusters; ++c) {
      const auto projected = project(bank.head(c, layer), it->second);
      AnomalyMap m = anomaly_map(projected, side, test_texts[static_cast<std::size_t>(c)], cfg.logit_scale,
                                 &out.degenerate);
      const double w = out.weights[static_cast<std::size_t>(c)] * layer_weight;
      for (std::size_t k = 0; k < fused.values.size(); ++k) fused.values[k] += w * m.values[k];
      out.per_layer[{c, layer}] = std::move(m);
    }
  }
  const int height = cfg.height > 0 ? cfg.height : (bundle.height > 0 ? bundle.height : side);
  const int width = cfg.width > 0 ? cfg.width : (bundle.width > 0 ? bundle.width : side);
  out.final_map = gaussian_smooth(upsample(fused, height, width), cfg.smoothing_sigma);
  return out;
}

}  // namespace stackad
