/*
 * Copyright 2026 The scotlift Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "scotlift/synthetic/corpus.hpp"
#include "scotlift/train/checkpoint.hpp"
#include "scotlift/train/trainer.hpp"

using namespace scotlift;
using namespace scotlift::train;
namespace fs = std::filesystem;

namespace {

model::ScotConfig tiny_trunk() {
  model::ScotConfig c;
  c.height = c.width = 16;
  c.patch = 2;
  c.embed_dim = 8;
  c.stages = 2;
  c.heads = {2, 4};
  c.window = 4;
  c.blocks_per_stage = 1;
  c.convnext_kernel = 3;
  return c;
}

model::LiftConfig tiny_lift() {
  model::LiftConfig l;
  l.heads = {2, 2};
  l.sigma_hidden = 8;
  l.levels_total = 3;
  l.levels_sampled = 2;
  return l;
}

data::Series tiny_corpus(std::size_t traj, std::uint64_t seed) {
  synthetic::CorpusParams p;
  p.flow.n = 16;
  p.flow.nu = 1e-2;
  p.flow.drag = 0.05;
  p.steps_per_snapshot = 5;
  p.forcing_rms = 0.3;
  synthetic::StackParams3D s;
  s.flow = p.flow;
  s.levels = 3;
  s.sigmas = {0.9995, 0.97349006, 0.74549896};
  return synthetic::make_finetune_corpus(p, s, traj, 5, seed);
}

TrainConfig tiny_train(long steps) {
  TrainConfig c;
  c.steps = steps;
  c.batch = 2;
  c.lr = 1e-3;
  c.val_every = 2;
  c.seed = 4;
  return c;
}

double direct_loss(const Tensor<double>& p, const Tensor<double>& t, const std::vector<std::size_t>& ch) {
  const std::size_t c_all = p.shape().back();
  double total = 0;
  for (auto c : ch) {
    double num = 0, den = 0;
    for (std::size_t i = c; i < p.size(); i += c_all) {
      num += std::abs(p[i] - t[i]);
      den += std::abs(t[i]);
    }
    total += num / (den + 1e-10);
  }
  return total / static_cast<double>(ch.size());
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("scotlift_train_" + name + "_" + std::to_string(::getpid()));
}

}  // namespace

TEST(Loss, OneNinthExample) {
  Tensor<double> t(Shape{3, 1}, std::vector<double>{1, 2, 6});
  Tensor<double> p(Shape{3, 1}, std::vector<double>{1, 2, 7});
  EXPECT_NEAR(normalized_l1_value(p, t), 1.0 / (9.0 + kLossEps), 1e-15);
}

TEST(Loss, EpsilonGuardOnZeroTarget) {
  Tensor<double> t(Shape{4, 1}), p(Shape{4, 1});
  p[2] = 1.0;
  EXPECT_NEAR(normalized_l1_value(p, t), 1e10, 1.0);
}

TEST(Loss, ChannelSubsetMatchesDirectSum) {
  Rng rng(2);
  Tensor<double> p(Shape{2, 3, 5, 4}), t(Shape{2, 3, 5, 4});
  for (auto& v : p.storage()) v = rng.normal();
  for (auto& v : t.storage()) v = rng.normal();
  const std::vector<std::size_t> ch{0, 1, 2};
  EXPECT_NEAR(normalized_l1_value(p, t, ch), direct_loss(p, t, ch), 1e-12);
  auto v = normalized_l1(constant(p), t, ch);
  EXPECT_NEAR(v.value()[0], direct_loss(p, t, ch), 1e-12);
}

TEST(Loss, GradientIsSignOverReference) {
  Tensor<double> t(Shape{2, 1}, std::vector<double>{1, 3});
  Tensor<double> pv(Shape{2, 1}, std::vector<double>{2, 1});
  Var<double> p(pv, true);
  auto l = normalized_l1(p, t);
  backward(l);
  const double w = 1.0 / (4.0 + kLossEps);
  EXPECT_NEAR(p.grad()[0], w, 1e-15);
  EXPECT_NEAR(p.grad()[1], -w, 1e-15);
}

TEST(Schedule, CosineEndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 100, 1e-3), 1e-3);
  EXPECT_NEAR(cosine_lr(100, 100, 1e-3), 0.0, 1e-18);
  EXPECT_NEAR(cosine_lr(50, 100, 1e-3), 5e-4, 1e-15);
  EXPECT_THROW(cosine_lr(101, 100, 1e-3), ContractError);
}

TEST(AdamW, ZeroLearningRateLeavesParameters) {
  ParamStore<float> p;
  Rng rng(1);
  Tensor<float> w(Shape{3, 3});
  for (auto& v : w.storage()) v = static_cast<float>(rng.normal());
  p.add("w", w);
  const auto before = p.hash();
  auto y = ops::sum_all(ops::mul(p.get("w"), p.get("w")));
  backward(y);
  AdamState s;
  adamw_update(p, s, 0.0);
  EXPECT_EQ(p.hash(), before);
  EXPECT_EQ(s.t, 1);
}

TEST(AdamW, FirstStepMovesByLearningRate) {
  ParamStore<float> p;
  p.add("w", Tensor<float>(Shape{2}, std::vector<float>{1.0f, -2.0f}));
  auto y = ops::sum_all(p.get("w"));
  backward(y);
  AdamState s;
  adamw_update(p, s, 0.1, AdamWConfig{0.9, 0.999, 1e-8, 0.0});
  EXPECT_NEAR(p.get("w").value()[0], 0.9f, 1e-6);
  EXPECT_NEAR(p.get("w").value()[1], -2.1f, 1e-6);
}

TEST(Trainer, OneBatchOverfit) {
  auto corpus = tiny_corpus(1, 3);
  auto stats = data::fit_scaler(corpus.values);
  data::apply_scaler(corpus.values, stats, data::Direction::Forward);
  auto m = make_trunk_model(tiny_trunk(), 1);
  auto lifted = make_lifted_model(tiny_trunk(), tiny_lift(), 1);
  std::vector<std::uint64_t> seeds{1, 2};
  const auto batch = make_batch(corpus, {0, 1}, 0, 2, 0.0, &seeds, false);
  AdamState opt;
  const double first = train_step(lifted, opt, batch, 1e-3, 0, {0, 1, 2}, 1e-5);
  double last = first;
  for (long s = 1; s < 200; ++s) last = train_step(lifted, opt, batch, 1e-3, s, {0, 1, 2}, 1e-5);
  EXPECT_LT(last, first);
  EXPECT_LT(last, 0.5 * first);
  (void)m;
}

TEST(Trainer, RatioZeroGivesFullPresenceMask) {
  auto corpus = tiny_corpus(1, 3);
  std::vector<std::uint64_t> seeds{7};
  const auto b = make_batch(corpus, {2}, 1, 2, 0.0, &seeds, false);
  ASSERT_EQ(b.x.shape(), (Shape{1, 2, 16, 16, 4}));
  for (std::size_t i = 3; i < b.x.size(); i += 4) {
    EXPECT_EQ(b.x[i], 1.0f);
    EXPECT_EQ(b.y[i], 1.0f);
  }
  EXPECT_EQ(b.sigmas, (std::vector<double>{0.97349006, 0.74549896}));
  const auto sparse = make_batch(corpus, {2}, 0, 2, 0.8, &seeds, false);
  std::size_t kept = 0;
  for (std::size_t i = 3; i < 16 * 16 * 4; i += 4) kept += sparse.x[i] == 1.0f;
  EXPECT_EQ(kept, data::kept_count(256, 0.8));
}

TEST(Trainer, MixedAndRandomShareLiftWeights) {
  auto pre = make_trunk_model(tiny_trunk(), 9);
  auto random = make_lifted_model(tiny_trunk(), tiny_lift(), 5);
  auto mixed = make_lifted_model(tiny_trunk(), tiny_lift(), 5);
  mixed.params.assign_from(pre.params, "trunk.");
  EXPECT_EQ(mixed.params.hash("lift."), random.params.hash("lift."));
  EXPECT_NE(mixed.params.hash("trunk."), random.params.hash("trunk."));
  EXPECT_EQ(mixed.params.hash("trunk."), pre.params.hash("trunk."));
}

TEST(Trainer, FinetuneIsDeterministic) {
  auto train_s = tiny_corpus(2, 1), val_s = tiny_corpus(1, 2);
  auto cfg = tiny_train(4);
  cfg.init = InitMode::Random;
  auto a = run_finetune(train_s, val_s, nullptr, tiny_trunk(), tiny_lift(), cfg);
  auto b = run_finetune(train_s, val_s, nullptr, tiny_trunk(), tiny_lift(), cfg);
  EXPECT_EQ(a.checkpoint.params.hash(), b.checkpoint.params.hash());
  EXPECT_EQ(a.val_curve, b.val_curve);
  ASSERT_EQ(a.val_curve.size(), 3u);
  EXPECT_EQ(a.val_curve.front().first, 0);
  EXPECT_EQ(a.val_curve.back().first, 4);
}

TEST(Trainer, MixedInitNeedsPretrained) {
  auto train_s = tiny_corpus(1, 1);
  auto cfg = tiny_train(1);
  cfg.init = InitMode::Mixed;
  EXPECT_THROW(run_finetune(train_s, train_s, nullptr, tiny_trunk(), tiny_lift(), cfg), ContractError);
  EXPECT_THROW(parse_init("warm"), ConfigError);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto train_s = tiny_corpus(1, 1);
  auto cfg = tiny_train(2);
  cfg.init = InitMode::Random;
  auto r = run_finetune(train_s, train_s, nullptr, tiny_trunk(), tiny_lift(), cfg);
  const auto path = temp_file("ckpt");
  save_checkpoint(r.checkpoint, path);
  auto loaded = load_checkpoint(path);
  EXPECT_EQ(serialize_checkpoint(loaded), serialize_checkpoint(r.checkpoint));
  EXPECT_EQ(loaded.params.hash(), r.checkpoint.params.hash());
  EXPECT_EQ(loaded.step, 2);
  fs::remove(path);
}

TEST(Checkpoint, CorruptedTailDetected) {
  auto m = make_trunk_model(tiny_trunk(), 2);
  Checkpoint c;
  c.trunk = m.trunk;
  c.params = m.params;
  c.config_hash = m.hash();
  auto bytes = serialize_checkpoint(c);
  auto flipped = bytes;
  flipped[flipped.size() - 20] ^= 0x5a;
  EXPECT_THROW(parse_checkpoint(flipped, "mem"), CorruptionError);
  EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 4), "mem"), CorruptionError);
  EXPECT_THROW(parse_checkpoint("garbage!" + bytes.substr(8), "mem"), FormatError);
  EXPECT_THROW(load_checkpoint(temp_file("absent")), IoError);
}

TEST(Checkpoint, ResumeRejectsForeignConfig) {
  auto m = make_trunk_model(tiny_trunk(), 2);
  Checkpoint c;
  c.trunk = m.trunk;
  c.params = m.params;
  c.config_hash = m.hash();
  EXPECT_NO_THROW(check_resume(c, m.hash()));
  auto other = tiny_trunk();
  other.embed_dim = 16;
  EXPECT_THROW(check_resume(c, model::config_hash(other)), ConfigError);
}
