// Copyright 2026 The ETTA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <vector>

#include "etta/adapt.hpp"
#include "etta/errors.hpp"
#include "etta/parallel.hpp"
#include "json.hpp"
#include "test_util.hpp"

namespace etta::adapt {
namespace {

namespace fs = std::filesystem;
using etta::testing::kGradSeeds;
using etta::testing::kGradTol;
using etta::testing::numeric_grad;
using etta::testing::random_tensor;
using etta::testing::rel_error;
using vit::AdaptState;
using vit::ViTConfig;
using vit::ViTParams;

ViTConfig tiny_config() {
  ViTConfig c;
  c.image_size = 8;
  c.patch_size = 2;
  c.hidden_dim = 8;
  c.num_layers = 3;
  c.num_heads = 2;
  c.mlp_ratio = 2;
  c.num_classes = 4;
  return c;
}

Tensor random_images(std::size_t batch, const ViTConfig& c, Rng& rng) {
  Tensor t({batch, c.channels, c.image_size, c.image_size});
  for (float& v : t.values()) v = static_cast<float>(rng.uniform());
  return t;
}

std::vector<Batch> random_stream(std::size_t batches, std::size_t size, const ViTConfig& c,
                                 std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Batch> out;
  for (std::size_t i = 0; i < batches; ++i) {
    Batch b{random_images(size, c, rng), {}};
    for (std::size_t j = 0; j < size; ++j) b.labels.push_back(static_cast<int>(rng.below(4)));
    out.push_back(std::move(b));
  }
  return out;
}

bool same_state(const AdaptState& a, const AdaptState& b) {
  if (!(a.delta == b.delta) || a.layer_bias.size() != b.layer_bias.size()) return false;
  for (std::size_t i = 0; i < a.norms.size(); ++i) {
    if (!(a.norms[i].gamma == b.norms[i].gamma) || !(a.norms[i].beta == b.norms[i].beta)) {
      return false;
    }
  }
  for (const auto& [l, t] : a.layer_bias) {
    if (!(b.layer_bias.at(l) == t)) return false;
  }
  return true;
}

TEST(LayerSelection, ShallowPrefix) {
  EXPECT_EQ(select_augmentation_layers(12, 6), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_TRUE(select_augmentation_layers(8, 0).empty());
  EXPECT_EQ(select_augmentation_layers(8, 8).size(), 8u);
  EXPECT_EQ(select_augmentation_layers(8, 8).back(), 7u);
  EXPECT_THROW(select_augmentation_layers(8, 9), ConfigError);
}

TEST(LayerSelection, AblationSets) {
  EXPECT_EQ(augmentation_layers(LayerSet::kDeep, 8, 4), (std::vector<std::size_t>{4, 5, 6, 7}));
  EXPECT_EQ(augmentation_layers(LayerSet::kUniform, 8, 4),
            (std::vector<std::size_t>{0, 2, 4, 6}));
  EXPECT_EQ(augmentation_layers(LayerSet::kUniform, 12, 6),
            (std::vector<std::size_t>{0, 2, 4, 6, 8, 10}));
  EXPECT_EQ(parse_layer_set("deep"), LayerSet::kDeep);
  EXPECT_THROW(parse_layer_set("middle"), ConfigError);
}

TEST(SourceStats, IdenticalImagesHaveZeroVariance) {
  ViTParams p = vit::init_params(tiny_config(), 3);
  Rng rng(1);
  Tensor one = random_images(1, p.config, rng);
  std::vector<float> twice(one.values().begin(), one.values().end());
  twice.insert(twice.end(), one.values().begin(), one.values().end());
  SourceStats s = compute_source_stats(p, Tensor({2, 3, 8, 8}, twice), {0});
  ASSERT_EQ(s.var.size(), 3u);
  for (const Tensor& v : s.var)
    for (float x : v.values()) EXPECT_EQ(x, 0.0f);
  EXPECT_EQ(s.count, 2u);
}

TEST(SourceStats, DuplicationInvariance) {
  ViTParams p = vit::init_params(tiny_config(), 3);
  Rng rng(2);
  Tensor a = random_images(10, p.config, rng);
  std::vector<float> doubled(a.values().begin(), a.values().end());
  doubled.insert(doubled.end(), a.values().begin(), a.values().end());
  SourceStats s1 = compute_source_stats(p, a, {2}, 3);
  SourceStats s2 = compute_source_stats(p, Tensor({20, 3, 8, 8}, doubled), {2}, 7);
  for (std::size_t l = 0; l < 3; ++l) {
    EXPECT_LT(max_abs_diff(s1.mean[l], s2.mean[l]), 1e-6f);
    EXPECT_LT(max_abs_diff(s1.var[l], s2.var[l]), 1e-6f);
  }
}

TEST(SourceStats, TooFewImagesIsDataError) {
  ViTParams p = vit::init_params(tiny_config(), 3);
  EXPECT_THROW(compute_source_stats(p, Tensor({1, 3, 8, 8}), {0}), DataError);
}

TEST(SourceStats, FileRoundTripAndModelCheck) {
  ViTParams p = vit::init_params(tiny_config(), 3);
  Rng rng(4);
  SourceStats s = compute_source_stats(p, random_images(6, p.config, rng), {1});
  const fs::path path = fs::temp_directory_path() / ("etta_stats_" + std::to_string(::getpid()));
  save_source_stats(s, p.config, path);
  SourceStats back = load_source_stats(path, p.config);
  EXPECT_EQ(back.count, 6u);
  EXPECT_EQ(back.r, 1u);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(back.mean[l], s.mean[l]);
  ViTConfig other = p.config;
  other.num_layers = 4;
  EXPECT_THROW(load_source_stats(path, other), FormatError);
  vit::save_checkpoint(p, path);
  EXPECT_THROW(load_source_stats(path, p.config), FormatError);
  fs::remove(path);
}

// Frozen regression values, regenerated with ETTA_REGEN_GOLDEN=1.
TEST(SourceStats, FixtureRegression) {
  const fs::path dir = ETTA_FIXTURE_DIR;
  ViTParams p = vit::load_checkpoint(dir / "tiny_vit.ckpt");
  Rng rng(64);
  SourceStats s = compute_source_stats(p, random_images(64, p.config, rng), {2});
  const fs::path golden = dir / "golden_source_stats.json";
  if (std::getenv("ETTA_REGEN_GOLDEN")) {
    nlohmann::json j;
    for (std::size_t l = 0; l < s.mean.size(); ++l) {
      j["mean"].push_back(s.mean[l].values());
      j["var"].push_back(s.var[l].values());
    }
    std::ofstream(golden) << j.dump(2) << "\n";
  }
  nlohmann::json j = nlohmann::json::parse(std::ifstream(golden));
  for (std::size_t l = 0; l < s.mean.size(); ++l) {
    auto mu = j["mean"][l].get<std::vector<float>>();
    auto var = j["var"][l].get<std::vector<float>>();
    for (std::size_t k = 0; k < mu.size(); ++k) {
      EXPECT_NEAR(s.mean[l][k], mu[k], 1e-5f);
      EXPECT_NEAR(s.var[l][k], var[k], 1e-5f);
    }
  }
}

TEST(Entropy, ReferenceValues) {
  EXPECT_NEAR(entropy_term(Tensor::full({3, 10}, 0.1f)), std::log(10.0), 1e-6);
  Tensor onehot({2, 4});
  onehot[1] = 1.0f;
  onehot[4 + 3] = 1.0f;
  EXPECT_EQ(entropy_term(onehot), 0.0);
  Tensor half({1, 10});
  half[0] = half[1] = 0.5f;
  EXPECT_NEAR(entropy_term(half), std::numbers::ln2, 1e-7);
  Tensor bad = Tensor::full({1, 4}, 0.3f);
  EXPECT_THROW(entropy_term(bad), ContractError);
}

TEST(Entropy, LogitsAgreeWithProbabilities) {
  Rng rng(7);
  Tensor z = random_tensor({5, 6}, rng, 2.0f);
  EXPECT_NEAR(entropy_from_logits(z), entropy_term(softmax(z)), 1e-6);
  EXPECT_NEAR(entropy_from_logits(Tensor({2, 10})), std::log(10.0), 1e-9);
}

TEST(Entropy, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < kGradSeeds; ++seed) {
    Rng rng(40 + seed);
    Tensor z = random_tensor({4, 7}, rng, 2.0f);
    Tensor g;
    entropy_from_logits(z, &g);
    EXPECT_LT(rel_error(g, numeric_grad([&] { return entropy_from_logits(z); }, z)), kGradTol);
  }
}

TEST(Discrepancy, MatchingStatsGiveZero) {
  Rng rng(9);
  std::vector<Tensor> feats = {random_tensor({6, 4}, rng), random_tensor({6, 4}, rng)};
  SourceStats s;
  for (const Tensor& f : feats) {
    Tensor mu({4}), var({4});
    for (std::size_t j = 0; j < 4; ++j) {
      double m = 0, v = 0;
      for (std::size_t b = 0; b < 6; ++b) m += f.at(b, j);
      m /= 6;
      for (std::size_t b = 0; b < 6; ++b) v += (f.at(b, j) - m) * (f.at(b, j) - m);
      mu[j] = static_cast<float>(m);
      var[j] = static_cast<float>(v / 6);
    }
    s.mean.push_back(mu);
    s.var.push_back(var);
  }
  EXPECT_LT(discrepancy_term(feats, s), 1e-12);
}

TEST(Discrepancy, UnitMeanShift) {
  std::vector<Tensor> feats = {Tensor({2, 3}, std::vector<float>{1, 0, 0, 1, 0, 0})};
  SourceStats s{{Tensor({3})}, {Tensor({3})}, 2, 0};
  EXPECT_DOUBLE_EQ(discrepancy_term(feats, s), 1.0);
  SourceStats two{{Tensor({3}), Tensor({3})}, {Tensor({3}), Tensor({3})}, 2, 0};
  EXPECT_THROW(discrepancy_term(feats, two), StateError);
}

TEST(Discrepancy, GradientMatchesFiniteDifferences) {
  for (int seed = 0; seed < kGradSeeds; ++seed) {
    Rng rng(70 + seed);
    std::vector<Tensor> feats = {random_tensor({5, 3}, rng), random_tensor({5, 3}, rng)};
    SourceStats s{{random_tensor({3}, rng), random_tensor({3}, rng)},
                  {Tensor::full({3}, 0.5f), Tensor::full({3}, 2.0f)},
                  5,
                  0};
    std::vector<Tensor> g;
    discrepancy_term(feats, s, &g);
    for (std::size_t l = 0; l < 2; ++l) {
      Tensor num = numeric_grad([&] { return discrepancy_term(feats, s); }, feats[l]);
      EXPECT_LT(rel_error(g[l], num), kGradTol) << "layer " << l << " seed " << seed;
    }
  }
}

TEST(Config, JsonRoundTripAndValidation) {
  TTAConfig c;
  c.r = 4;
  c.layer_set = LayerSet::kUniform;
  nlohmann::json j = c;
  EXPECT_EQ(j.get<TTAConfig>(), c);
  j["lr"] = 1;
  EXPECT_THROW(j.get<TTAConfig>(), ConfigError);
  TTAConfig bad;
  bad.lambda = -1;
  EXPECT_THROW(bad.validate(tiny_config()), ConfigError);
  bad = TTAConfig{};
  bad.l_bgt = 4;
  EXPECT_THROW(bad.validate(tiny_config()), ConfigError);
  EXPECT_THROW(method_config("sar", c), ConfigError);
  EXPECT_FALSE(method_config("noadapt", c).adapts());
  const TTAConfig nt = method_config("normtune", c);
  EXPECT_EQ(nt.lr_delta, 0.0f);
  EXPECT_EQ(nt.lr_delta_l, 0.0f);
  EXPECT_EQ(nt.l_bgt, 0u);
  EXPECT_EQ(nt.lambda, c.lambda);
  EXPECT_EQ(nt.lr_norm, c.lr_norm);
}

struct Fixture {
  ViTParams params = vit::init_params(tiny_config(), 21);
  SourceStats stats;
  Fixture() {
    Rng rng(22);
    stats = compute_source_stats(params, random_images(16, params.config, rng), {2});
  }
  TTAConfig config(std::size_t l_bgt = 2) const {
    TTAConfig c;
    c.r = 2;
    c.l_bgt = l_bgt;
    c.batch_size = 8;
    return c;
  }
};

TEST(Step, ZeroRatesLeaveStateAndPredictionsFrozen) {
  Fixture f;
  TTAConfig c = f.config();
  c.lr_norm = c.lr_delta = c.lr_delta_l = 0.0f;
  AdaptState s = make_state(f.params, c);
  AdaptState before = s;
  Rng rng(5);
  Tensor img = random_images(8, f.params.config, rng);
  StepResult r = tta_step(img, {}, f.params, s, &f.stats, c);
  EXPECT_TRUE(same_state(s, before));
  vit::ForwardTrace frozen = vit::model_forward(img, f.params, before, {2});
  for (std::size_t b = 0; b < 8; ++b) {
    const float* z = frozen.logits.data() + 4 * b;
    EXPECT_EQ(r.predictions[b], std::max_element(z, z + 4) - z);
  }
  EXPECT_EQ(r.record.forward_passes, 1u);
}

TEST(Step, EntropyDropsOnReforward) {
  Fixture f;
  TTAConfig c = f.config();
  c.lambda = 0.0f;
  c.momentum = 0.0f;
  c.lr_norm = 5e-2f;
  c.lr_delta = 5e-2f;
  AdaptState s = make_state(f.params, c);
  Rng rng(6);
  Tensor img = random_images(8, f.params.config, rng);
  StepResult first = tta_step(img, {}, f.params, s, nullptr, c);
  StepResult second = tta_step(img, {}, f.params, s, nullptr, c);
  EXPECT_LT(second.record.entropy, first.record.entropy);
  EXPECT_EQ(s.step, 2);
}

TEST(Step, NonFiniteLossRollsBack) {
  Fixture f;
  TTAConfig c = f.config();
  SourceStats poisoned = f.stats;
  poisoned.mean[1][0] = std::numeric_limits<float>::quiet_NaN();
  AdaptState s = make_state(f.params, c);
  AdaptState before = s;
  Rng rng(7);
  StepResult r = tta_step(random_images(8, f.params.config, rng), {}, f.params, s, &poisoned, c);
  EXPECT_TRUE(r.record.rolled_back);
  EXPECT_TRUE(same_state(s, before));
  EXPECT_EQ(s.step, 0);
}

TEST(Step, DivergentUpdateRollsBack) {
  Fixture f;
  TTAConfig c = f.config();
  AdaptState s = make_state(f.params, c);
  c.lr_delta = std::numeric_limits<float>::infinity();
  AdaptState before = s;
  Rng rng(8);
  Tensor img = random_images(8, f.params.config, rng);
  StepResult r = tta_step(img, {}, f.params, s, &f.stats, c);
  EXPECT_TRUE(r.record.rolled_back);
  EXPECT_TRUE(same_state(s, before));
}

TEST(Step, LambdaWithoutStatsIsStateError) {
  Fixture f;
  AdaptState s = make_state(f.params, f.config());
  Rng rng(9);
  EXPECT_THROW(tta_step(random_images(2, f.params.config, rng), {}, f.params, s, nullptr,
                        f.config()),
               StateError);
}

TEST(Stream, OneForwardPerBatchAndPreUpdatePredictions) {
  Fixture f;
  TTAConfig c = f.config();
  auto stream = random_stream(12, 8, f.params.config, 31);
  AdaptState s = make_state(f.params, c);
  std::size_t replayed = 0;
  AdaptState shadow = s;  // state the observer expects before each step
  const auto before = vit::forward_pass_count();
  StreamSummary sum = evaluate_stream(stream, f.params, s, &f.stats, c, [&](const StepResult& r) {
    const std::size_t i = static_cast<std::size_t>(r.record.batch_index);
    vit::ForwardTrace t = vit::model_forward(stream[i].images, f.params, shadow, {c.r});
    for (std::size_t b = 0; b < 8; ++b) {
      const float* z = t.logits.data() + 4 * b;
      EXPECT_EQ(r.predictions[b], std::max_element(z, z + 4) - z);
    }
    // advance the shadow copy with an identical step
    tta_step(stream[i].images, stream[i].labels, f.params, shadow, &f.stats, c);
    ++replayed;
  });
  EXPECT_EQ(replayed, 12u);
  EXPECT_EQ(sum.forward_passes, 12u);
  EXPECT_EQ(vit::forward_pass_count() - before, 12u + 2 * 12u);
  EXPECT_TRUE(same_state(s, shadow));
  EXPECT_EQ(sum.total, 96u);
}

TEST(Stream, ZeroRatesReproduceMergedBaseline) {
  Fixture f;
  TTAConfig c = method_config("noadapt", f.config());
  auto stream = random_stream(5, 8, f.params.config, 32);
  AdaptState s = make_state(f.params, c);
  StreamSummary sum = evaluate_stream(stream, f.params, s, nullptr, c);
  AdaptState frozen = vit::make_adapt_state(f.params, {});
  std::size_t correct = 0;
  for (const Batch& b : stream) {
    vit::ForwardTrace t = vit::model_forward(b.images, f.params, frozen, {c.r});
    for (std::size_t i = 0; i < 8; ++i) {
      const float* z = t.logits.data() + 4 * i;
      correct += (std::max_element(z, z + 4) - z) == b.labels[i];
    }
  }
  EXPECT_EQ(sum.correct, correct);
}

TEST(Stream, DeterministicRecordsAcrossRunsAndThreads) {
  Fixture f;
  TTAConfig c = f.config();
  auto stream = random_stream(6, 8, f.params.config, 33);
  auto run = [&](std::size_t threads) {
    set_worker_count(threads);
    AdaptState s = make_state(f.params, c);
    std::string out;
    evaluate_stream(stream, f.params, s, &f.stats, c,
                    [&](const StepResult& r) { out += metrics_json(r.record).dump() + "\n"; });
    set_worker_count(1);
    return out;
  };
  const std::string a = run(1);
  EXPECT_EQ(a, run(1));
  EXPECT_EQ(a, run(4));
}

TEST(State, ResetRestoresFreshState) {
  Fixture f;
  TTAConfig c = f.config();
  AdaptState s = make_state(f.params, c);
  auto stream = random_stream(3, 8, f.params.config, 34);
  evaluate_stream(stream, f.params, s, &f.stats, c);
  EXPECT_FALSE(same_state(s, make_state(f.params, c)));
  reset_state(s, f.params);
  EXPECT_TRUE(same_state(s, make_state(f.params, c)));
  EXPECT_EQ(s.step, 0);
  for (float v : s.delta_momentum.values()) EXPECT_EQ(v, 0.0f);
}

TEST(RelativeAccuracy, EndpointsAndMidpoint) {
  EXPECT_EQ(relative_accuracy(60, 50, 60), 1.0);
  EXPECT_EQ(relative_accuracy(50, 50, 60), 0.0);
  EXPECT_EQ(relative_accuracy(55, 50, 60), 0.5);
  EXPECT_THROW(relative_accuracy(50, 50, 50), ValidationError);
}

TEST(Selection, PicksLowestMeanLoss) {
  Fixture f;
  auto heldout = random_stream(2, 8, f.params.config, 35);
  HyperGrid grid;
  grid.l_bgt = {1, 2, 5};
  Selection sel = select_hyperparameters(f.params, &f.stats, heldout, f.config(), grid);
  ASSERT_EQ(sel.table.size(), 3u * 2u * 2u);  // l_bgt = 5 exceeds the depth
  double best = sel.table.front().mean_loss;
  for (const auto& g : sel.table) best = std::min(best, g.mean_loss);
  for (const auto& g : sel.table) {
    if (g.config == sel.best) {
      EXPECT_EQ(g.mean_loss, best);
    }
  }
}

}  // namespace
}  // namespace etta::adapt
