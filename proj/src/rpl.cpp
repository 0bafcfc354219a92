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

#include "stackad/rpl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "stackad/error.hpp"
#include "stackad/kernels.hpp"
#include "stackad/matrix.hpp"
#include "stackad/mock.hpp"

namespace stackad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kClamp = 1e-7;

double norm_of(std::span<const double> v) { return std::sqrt(dot(v, v)); }

void check_reference(const TextFeature& ref) {
  if (ref.normal.size() != ref.abnormal.size() || ref.normal.empty()) {
    throw ValidationError("rpl: reference channels differ in size");
  }
  for (const auto* ch : {&ref.normal, &ref.abnormal}) {
    const auto v = to_double(*ch);
    if (std::abs(norm_of(v) - 1.0) > 1e-3) throw ValidationError("rpl: reference embedding is not unit norm");
  }
}

struct Cosines {
  double cn = 0.0;
  double ca = 0.0;
  std::vector<double> c;  // unit cls
  bool zero = false;
};

Cosines cosines(std::span<const float> cls, const LearnablePromptPair& pair, double inv_n, double inv_a) {
  Cosines out;
  out.c = to_double(cls);
  if (out.c.size() != pair.normal.size()) throw ValidationError("rpl: CLS dim does not match prompt dim");
  for (double x : out.c) {
    if (!std::isfinite(x)) throw NumericError("rpl: non-finite CLS");
  }
  if (!normalize_in_place(out.c)) {
    out.zero = true;
    return out;
  }
  out.cn = dot(out.c, pair.normal) * inv_n;
  out.ca = dot(out.c, pair.abnormal) * inv_a;
  return out;
}

std::pair<double, double> inverse_norms(const LearnablePromptPair& pair) {
  const double nn = norm_of(pair.normal);
  const double na = norm_of(pair.abnormal);
  if (nn == 0.0 || na == 0.0) throw NumericError("rpl: learnable prompt collapsed to zero");
  return {1.0 / nn, 1.0 / na};
}

}  // namespace

LearnablePromptPair init_prompts(const TextFeature& reference, std::uint64_t seed, double noise_scale) {
  check_reference(reference);
  LearnablePromptPair pair;
  pair.reference = reference;
  pair.normal = to_double(reference.normal);
  pair.abnormal = to_double(reference.abnormal);
  if (noise_scale > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_scale);
    for (double& x : pair.normal) x += noise(rng);
    for (double& x : pair.abnormal) x += noise(rng);
  }
  return pair;
}

double classify(std::span<const float> cls, const LearnablePromptPair& pair, double logit_scale, bool* degenerate) {
  const auto [inv_n, inv_a] = inverse_norms(pair);
  const auto cs = cosines(cls, pair, inv_n, inv_a);
  if (degenerate != nullptr) *degenerate = cs.zero;
  if (cs.zero) return 0.5;
  return kernels::sigmoid(logit_scale * (cs.ca - cs.cn));
}

std::vector<double> image_scores(std::span<const std::vector<float>> cls, const LearnablePromptPair& pair,
                                 double logit_scale) {
  std::vector<double> out(cls.size());
  const auto n = static_cast<std::int64_t>(cls.size());
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) out[i] = image_score(cls[i], pair, logit_scale);
  return out;
}

RplLoss rpl_loss(double p, int y, const LearnablePromptPair& pair, double text_weight) {
  RplLoss out;
  const double pc = std::clamp(p, kClamp, 1.0 - kClamp);
  out.l_ce = y == 1 ? -std::log(pc) : -std::log(1.0 - pc);
  const auto d = static_cast<double>(pair.dim());
  for (int i = 0; i < pair.dim(); ++i) {
    const double en = pair.normal[i] - static_cast<double>(pair.reference.normal[i]);
    const double ea = pair.abnormal[i] - static_cast<double>(pair.reference.abnormal[i]);
    out.l_text_normal += en * en;
    out.l_text_abnormal += ea * ea;
  }
  out.l_text_normal /= d;
  out.l_text_abnormal /= d;
  out.l_text = 0.5 * (out.l_text_normal + out.l_text_abnormal);
  out.l_cls = out.l_ce + text_weight * out.l_text;
  return out;
}

void RplConfig::validate() const {
  if (!(logit_scale > 0.0)) throw ValidationError("rpl: logit_scale must be > 0");
  if (!(lr >= 0.0)) throw ValidationError("rpl: lr must be >= 0");
  if (epochs < 0 || batch_size < 1) throw ValidationError("rpl: epochs >= 0 and batch_size >= 1 required");
  if (!(noise_scale >= 0.0)) throw ValidationError("rpl: noise_scale must be >= 0");
  if (!(text_weight >= 0.0)) throw ValidationError("rpl: text_weight must be >= 0");
}

json to_json(const RplConfig& c) {
  return {{"logit_scale", c.logit_scale},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"noise_scale", c.noise_scale},
          {"text_weight", c.text_weight},
          {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}},
          {"seed", c.seed}};
}

RplConfig rpl_config_from_json(const json& j) {
  RplConfig c;
  try {
    c.logit_scale = j.at("logit_scale").get<double>();
    c.lr = j.at("lr").get<double>();
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.noise_scale = j.at("noise_scale").get<double>();
    c.text_weight = j.at("text_weight").get<double>();
    const auto& a = j.at("adam");
    c.adam = AdamConfig{a.at("beta1").get<double>(), a.at("beta2").get<double>(), a.at("eps").get<double>()};
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("rpl config: ") + e.what());
  }
  c.validate();
  return c;
}

RplLossGrad rpl_loss_and_grad(const LearnablePromptPair& pair, std::span<const std::vector<float>> cls,
                              std::span<const int> labels, const RplConfig& cfg) {
  if (cls.empty() || cls.size() != labels.size()) throw ValidationError("rpl: batch and labels differ in size");
  const int d = pair.dim();
  const auto [inv_n, inv_a] = inverse_norms(pair);
  RplLossGrad out;
  out.d_normal.assign(d, 0.0);
  out.d_abnormal.assign(d, 0.0);
  const double inv_batch = 1.0 / static_cast<double>(cls.size());

  for (std::size_t i = 0; i < cls.size(); ++i) {
    const auto cs = cosines(cls[i], pair, inv_n, inv_a);
    const double p = cs.zero ? 0.5 : kernels::sigmoid(cfg.logit_scale * (cs.ca - cs.cn));
    const double pc = std::clamp(p, kClamp, 1.0 - kClamp);
    const bool positive = labels[i] == 1;
    out.loss += (positive ? -std::log(pc) : -std::log(1.0 - pc)) * inv_batch;
    if (cs.zero || p < kClamp || p > 1.0 - kClamp) continue;
    // dl/dz for z = scale * (cos_a - cos_n).
    const double g_z = (positive ? -(1.0 - p) : p) * inv_batch;
    const double k = g_z * cfg.logit_scale;
    for (int r = 0; r < d; ++r) {
      const double ua = pair.abnormal[r] * inv_a;
      const double un = pair.normal[r] * inv_n;
      out.d_abnormal[r] += k * (cs.c[r] - ua * cs.ca) * inv_a;
      out.d_normal[r] -= k * (cs.c[r] - un * cs.cn) * inv_n;
    }
  }

  const double w = cfg.text_weight / static_cast<double>(d);
  double text_n = 0.0;
  double text_a = 0.0;
  for (int r = 0; r < d; ++r) {
    const double en = pair.normal[r] - static_cast<double>(pair.reference.normal[r]);
    const double ea = pair.abnormal[r] - static_cast<double>(pair.reference.abnormal[r]);
    text_n += en * en;
    text_a += ea * ea;
    out.d_normal[r] += w * en;
    out.d_abnormal[r] += w * ea;
  }
  out.loss += cfg.text_weight * 0.5 * (text_n + text_a) / static_cast<double>(d);
  return out;
}

RplResult train_rpl(std::span<const std::vector<float>> cls, std::span<const int> labels,
                    const TextFeature& reference, const RplConfig& cfg) {
  cfg.validate();
  if (cls.empty() || cls.size() != labels.size()) throw ValidationError("rpl: no labelled CLS features");
  RplResult out;
  out.pair = init_prompts(reference, mix_seed(cfg.seed, 0x4E01ull), cfg.noise_scale);
  const bool any_pos = std::any_of(labels.begin(), labels.end(), [](int y) { return y == 1; });
  const bool any_neg = std::any_of(labels.begin(), labels.end(), [](int y) { return y == 0; });
  out.single_class = !(any_pos && any_neg);

  std::vector<std::size_t> order(cls.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffler(mix_seed(cfg.seed, 0x4E02ull));
  AdamState n_state(out.pair.normal.size());
  AdamState a_state(out.pair.abnormal.size());
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffler);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<std::vector<float>> batch;
      std::vector<int> batch_labels;
      for (std::size_t k = start; k < stop; ++k) {
        batch.push_back(cls[order[k]]);
        batch_labels.push_back(labels[order[k]]);
      }
      const auto g = rpl_loss_and_grad(out.pair, batch, batch_labels, cfg);
      if (!std::isfinite(g.loss)) throw NumericError("rpl: non-finite loss at step " + std::to_string(step));
      adam_step(n_state, out.pair.normal, g.d_normal, cfg.lr, cfg.adam);
      adam_step(a_state, out.pair.abnormal, g.d_abnormal, cfg.lr, cfg.adam);
      out.curve.push_back({epoch, step++, g.loss});
    }
  }
  return out;
}

void save_rpl(const LearnablePromptPair& pair, const json& meta, const fs::path& path) {
  SclpDocument doc;
  doc.kind = "rpl";
  doc.ids = {pair.reference.prompt_key};
  doc.meta = meta;
  doc.meta["d"] = pair.dim();
  doc.meta["reference_key"] = pair.reference.prompt_key;
  const auto shape = std::vector<std::int64_t>{pair.dim()};
  doc.tensors.push_back({"t_prime/normal", shape, "f32le", to_float(pair.normal), {}});
  doc.tensors.push_back({"t_prime/abnormal", shape, "f32le", to_float(pair.abnormal), {}});
  doc.tensors.push_back({"reference/normal", shape, "f32le", pair.reference.normal, {}});
  doc.tensors.push_back({"reference/abnormal", shape, "f32le", pair.reference.abnormal, {}});
  write_sclp(doc, path);
}

LearnablePromptPair load_rpl(const fs::path& path) {
  const auto doc = read_sclp(path);
  if (doc.kind != "rpl") throw CodecError(path.string() + ": expected kind 'rpl'");
  LearnablePromptPair pair;
  pair.normal = to_double(doc.tensor("t_prime/normal").f32);
  pair.abnormal = to_double(doc.tensor("t_prime/abnormal").f32);
  pair.reference.prompt_key = doc.meta.value("reference_key", std::string{});
  pair.reference.normal = doc.tensor("reference/normal").f32;
  pair.reference.abnormal = doc.tensor("reference/abnormal").f32;
  const auto d = pair.normal.size();
  if (pair.abnormal.size() != d || pair.reference.normal.size() != d || pair.reference.abnormal.size() != d) {
    throw CodecError(path.string() + ": inconsistent prompt dims");
  }
  return pair;
}

namespace {

std::ofstream open_csv(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << std::setprecision(17);
  return out;
}

}  // namespace

void write_rpl_loss_csv(const std::vector<RplRecord>& curve, const fs::path& path) {
  auto out = open_csv(path);
  out << "epoch,step,loss\n";
  for (const auto& r : curve) out << r.epoch << ',' << r.step << ',' << r.loss << '\n';
}

void write_scores_csv(const std::vector<ScoreRow>& rows, const fs::path& path) {
  auto out = open_csv(path);
  out << "image_id,score,label\n";
  for (const auto& r : rows) out << r.image_id << ',' << r.score << ',' << r.label << '\n';
}

std::vector<ScoreRow> read_scores_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingInputError("missing score file '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line != "image_id,score,label") {
    throw ValidationError(path.string() + ": unexpected score CSV header");
  }
  std::vector<ScoreRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto a = line.find(',');
    const auto b = line.rfind(',');
    if (a == std::string::npos || a == b) throw ValidationError(path.string() + ": malformed row '" + line + "'");
    ScoreRow r;
    r.image_id = line.substr(0, a);
    try {
      r.score = std::stod(line.substr(a + 1, b - a - 1));
      r.label = std::stoi(line.substr(b + 1));
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ": malformed row '" + line + "'");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace stackad
