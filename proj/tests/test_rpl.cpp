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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "stackad/error.hpp"
#include "stackad/metrics.hpp"
#include "stackad/mock.hpp"
#include "stackad/rpl.hpp"
#include "test_util.hpp"

using namespace stackad;

namespace {

TextFeature axis_reference(int d) {
  TextFeature t{"ref", std::vector<float>(d, 0.0f), std::vector<float>(d, 0.0f)};
  t.normal[0] = 1.0f;
  t.abnormal[1] = 1.0f;
  return t;
}

TextFeature random_reference(std::mt19937_64& rng, int d) {
  return testutil::unit_text("ref", testutil::random_floats(rng, d), testutil::random_floats(rng, d));
}

// Separable toy set: anomalous CLS lean toward the abnormal axis.
void separable_set(std::mt19937_64& rng, int n, int d, std::vector<std::vector<float>>& cls, std::vector<int>& y) {
  std::normal_distribution<float> noise(0.0f, 0.3f);
  for (int i = 0; i < n; ++i) {
    const int label = i % 2;
    std::vector<float> c(d);
    for (auto& x : c) x = noise(rng);
    c[label == 1 ? 1 : 0] += 1.0f;
    cls.push_back(std::move(c));
    y.push_back(label);
  }
}

}  // namespace

TEST(InitPrompts, ZeroNoiseIsReference) {
  const auto ref = axis_reference(8);
  const auto pair = init_prompts(ref, 3, 0.0);
  for (int i = 0; i < 8; ++i) {
    EXPECT_EQ(pair.normal[i], ref.normal[i]);
    EXPECT_EQ(pair.abnormal[i], ref.abnormal[i]);
  }
  EXPECT_NEAR(rpl_loss(1.0, 1, pair).l_cls, 0.0, 2e-7);  // clamp at 1 - 1e-7
  EXPECT_EQ(rpl_loss(0.3, 1, pair).l_text, 0.0);
}

TEST(InitPrompts, DeterministicAndRejectsNonUnitReference) {
  const auto ref = axis_reference(6);
  EXPECT_EQ(init_prompts(ref, 9).normal, init_prompts(ref, 9).normal);
  EXPECT_NE(init_prompts(ref, 9).normal, init_prompts(ref, 10).normal);
  auto bad = ref;
  bad.normal[0] = 2.0f;
  EXPECT_THROW(init_prompts(bad, 0), ValidationError);
}

TEST(InitPrompts, NoiseMonteCarlo) {
  // E[|t' - t|^2 / d] = sigma^2 = 4e-4 per channel; the mean over 100 seeds of
  // the per-channel statistic has std sigma^2 * sqrt(2 / d) / sqrt(100).
  const int d = 64;
  const auto ref = axis_reference(d);
  double mean = 0;
  for (int seed = 0; seed < 100; ++seed) {
    const auto pair = init_prompts(ref, static_cast<std::uint64_t>(seed), 0.02);
    mean += rpl_loss(0.5, 0, pair).l_text_normal / 100.0;
  }
  const double sd = 4e-4 * std::sqrt(2.0 / d) / 10.0;
  EXPECT_NEAR(mean, 4e-4, 3 * sd);
}

TEST(Classify, KnownValues) {
  const int d = 3;
  LearnablePromptPair pair;
  pair.normal = {1, 0, 0};
  pair.abnormal = {0, 1, 0};
  pair.reference = axis_reference(d);
  const double cn = 0.2, ca = 0.5;
  const std::vector<float> cls{static_cast<float>(cn), static_cast<float>(ca),
                               static_cast<float>(std::sqrt(1 - cn * cn - ca * ca))};
  EXPECT_NEAR(classify(cls, pair, 1.0), 0.5744, 5e-5);
  EXPECT_NEAR(classify(std::vector<float>{0, 1, 0}, pair, 100.0), 1.0, 1e-12);
  EXPECT_EQ(classify(std::vector<float>{1, 1, 0}, pair, 100.0), 0.5);
  bool degenerate = false;
  EXPECT_EQ(classify(std::vector<float>{0, 0, 0}, pair, 100.0, &degenerate), 0.5);
  EXPECT_TRUE(degenerate);
  EXPECT_EQ(image_score(cls, pair, 3.0), classify(cls, pair, 3.0));
}

TEST(Classify, ScaleInvariance) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 4 + trial % 5;
    auto pair = init_prompts(random_reference(rng, d), rng(), 0.1);
    const auto cls = testutil::random_floats(rng, d);
    const double s = classify(cls, pair, 20.0);
    EXPECT_GT(s, 0.0);
    EXPECT_LT(s, 1.0);
    auto scaled = cls;
    for (auto& x : scaled) x *= 4.0f;
    EXPECT_NEAR(classify(scaled, pair, 20.0), s, 1e-12);
    for (double& x : pair.normal) x *= 3.0;
    for (double& x : pair.abnormal) x *= 0.5;
    EXPECT_NEAR(classify(cls, pair, 20.0), s, 1e-12);
  }
}

TEST(Classify, BatchScoresPreserveOrder) {
  std::mt19937_64 rng(2);
  const auto pair = init_prompts(random_reference(rng, 6), 0);
  std::vector<std::vector<float>> cls;
  for (int i = 0; i < 17; ++i) cls.push_back(testutil::random_floats(rng, 6));
  const auto s = image_scores(cls, pair, 100.0);
  ASSERT_EQ(s.size(), cls.size());
  for (std::size_t i = 0; i < cls.size(); ++i) EXPECT_EQ(s[i], classify(cls[i], pair, 100.0));
}

TEST(RplLossTerms, KnownValues) {
  const int d = 8;
  auto pair = init_prompts(axis_reference(d), 0, 0.0);
  EXPECT_NEAR(rpl_loss(0.5, 1, pair).l_ce, 0.69315, 5e-6);
  EXPECT_NEAR(rpl_loss(0.5, 0, pair).l_ce, std::log(2.0), 1e-15);
  pair.normal[3] += 1.0;
  const auto l = rpl_loss(0.5, 1, pair);
  EXPECT_NEAR(l.l_text_normal, 0.125, 1e-15);
  EXPECT_EQ(l.l_text_abnormal, 0.0);
  EXPECT_NEAR(l.l_text, 0.0625, 1e-15);
  EXPECT_NEAR(l.l_cls, std::log(2.0) + 0.0625, 1e-15);
  EXPECT_NEAR(rpl_loss(0.5, 1, pair, 0.0).l_cls, std::log(2.0), 1e-15);
  // Clamped at 1e-7.
  EXPECT_NEAR(rpl_loss(0.0, 1, pair).l_ce, -std::log(1e-7), 1e-9);
}

TEST(RplGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto r = gradcheck::check_cls(gradcheck::random_cls_instance(rng));
    EXPECT_LT(r.loss_diff, 1e-9);
    worst = std::max(worst, r.max_rel);
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(RplGradient, TextTermStationaryAtAnchor) {
  std::mt19937_64 rng(4);
  const auto ref = random_reference(rng, 6);
  const auto pair = init_prompts(ref, 0, 0.0);
  RplConfig cfg;
  cfg.text_weight = 1.0;
  // A zero CLS contributes no cross-entropy gradient, leaving only the text term.
  const std::vector<std::vector<float>> cls{std::vector<float>(6, 0.0f)};
  const std::vector<int> y{1};
  const auto g = rpl_loss_and_grad(pair, cls, y, cfg);
  for (double v : g.d_normal) EXPECT_EQ(v, 0.0);
  for (double v : g.d_abnormal) EXPECT_EQ(v, 0.0);
}

TEST(TrainRpl, ZeroLearningRateLeavesPairUnchanged) {
  std::mt19937_64 rng(5);
  std::vector<std::vector<float>> cls;
  std::vector<int> y;
  separable_set(rng, 20, 6, cls, y);
  RplConfig cfg;
  cfg.lr = 0.0;
  const auto ref = axis_reference(6);
  const auto r = train_rpl(cls, y, ref, cfg);
  const auto init = init_prompts(ref, mix_seed(cfg.seed, 0x4E01), cfg.noise_scale);
  EXPECT_EQ(r.pair.normal, init.normal);
  EXPECT_EQ(r.pair.abnormal, init.abnormal);
  EXPECT_EQ(r.curve.size(), 4u);  // 2 epochs x ceil(20/16)
  EXPECT_FALSE(r.single_class);
}

TEST(TrainRpl, FullBatchLossDecreasesMonotonically) {
  std::mt19937_64 rng(6);
  std::vector<std::vector<float>> cls;
  std::vector<int> y;
  separable_set(rng, 32, 6, cls, y);
  RplConfig cfg;
  cfg.lr = 1e-3;
  cfg.epochs = 30;
  cfg.batch_size = 32;
  cfg.logit_scale = 10.0;
  // Start away from the optimum: reference axes swapped against the data.
  auto ref = axis_reference(6);
  std::swap(ref.normal, ref.abnormal);
  const auto r = train_rpl(cls, y, ref, cfg);
  ASSERT_EQ(r.curve.size(), 30u);
  for (std::size_t i = 1; i < r.curve.size(); ++i) EXPECT_LE(r.curve[i].loss, r.curve[i - 1].loss) << i;
  EXPECT_LT(r.curve.back().loss, r.curve.front().loss);
}

TEST(TrainRpl, SingleClassIsFlagged) {
  std::mt19937_64 rng(7);
  std::vector<std::vector<float>> cls{testutil::random_floats(rng, 4), testutil::random_floats(rng, 4)};
  const std::vector<int> y{0, 0};
  auto ref = axis_reference(4);
  EXPECT_TRUE(train_rpl(cls, y, ref, RplConfig{}).single_class);
}

TEST(TrainRpl, AurocInvariantToLogitScale) {
  std::mt19937_64 rng(8);
  std::vector<std::vector<float>> cls;
  std::vector<int> y;
  separable_set(rng, 40, 6, cls, y);
  const auto pair = init_prompts(axis_reference(6), 0, 0.05);
  std::vector<std::uint8_t> labels(y.begin(), y.end());
  const auto a = image_scores(cls, pair, 1.0);
  const auto b = image_scores(cls, pair, 10.0);
  EXPECT_DOUBLE_EQ(auroc(a, labels), auroc(b, labels));
}

TEST(RplIo, SaveLoadAndScores) {
  std::mt19937_64 rng(9);
  const auto pair = init_prompts(random_reference(rng, 5), 1);
  testutil::TempDir dir;
  save_rpl(pair, nlohmann::json::object(), dir / "rpl.sclp");
  const auto back = load_rpl(dir / "rpl.sclp");
  ASSERT_EQ(back.dim(), 5);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(back.normal[i], static_cast<float>(pair.normal[i]));
  EXPECT_EQ(back.reference.prompt_key, "ref");
  EXPECT_EQ(back.reference.abnormal, pair.reference.abnormal);

  const std::vector<ScoreRow> rows{{"a", 0.25, 0}, {"b", 1.0 / 3.0, 1}};
  write_scores_csv(rows, dir / "s.csv");
  const auto r = read_scores_csv(dir / "s.csv");
  ASSERT_EQ(r.size(), 2u);
  EXPECT_EQ(r[1].image_id, "b");
  EXPECT_EQ(r[1].score, 1.0 / 3.0);
  EXPECT_EQ(r[1].label, 1);
  testutil::spit(dir / "bad.csv", "id,score\n");
  EXPECT_THROW(read_scores_csv(dir / "bad.csv"), ValidationError);
}

TEST(RplConfigIo, RoundTripAndValidation) {
  RplConfig c;
  c.text_weight = 0.0;
  EXPECT_EQ(to_json(rpl_config_from_json(to_json(c))), to_json(c));
  c.lr = -1;
  EXPECT_THROW(c.validate(), ValidationError);
}
