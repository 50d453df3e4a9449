// Copyright 2026 The PAC Authors
// SPDX-License-Identifier: Apache-2.0

#include "pac/envs.hpp"
#include "pac/errors.hpp"
#include "pac/logging.hpp"
#include "pac/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace pac {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pac_training_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(b.data(), std::streamsize(b.size()));
}

ad::ParamSet scalar_param(double x) {
  ad::ParamSet p;
  p.add("x", ad::Matrix::Constant(1, 1, x));
  return p;
}

TEST(LearningRate, XxsPresetSchedule) {
  const OptimConfig c = OptimConfig::scale_preset("XXS");
  EXPECT_DOUBLE_EQ(lr_at(0, c), 1e-6);
  EXPECT_DOUBLE_EQ(lr_at(15000, c), 1e-4);
  const std::int64_t mid = (c.warmup_steps + c.decay_steps) / 2;
  EXPECT_NEAR(lr_at(mid, c), (c.lr_peak + c.lr_end) / 2, 1e-15);
  EXPECT_DOUBLE_EQ(lr_at(c.decay_steps, c), c.lr_end);
  EXPECT_DOUBLE_EQ(lr_at(c.decay_steps * 3, c), c.lr_end);
  EXPECT_THROW(lr_at(-1, c), std::invalid_argument);
  EXPECT_THROW(OptimConfig::scale_preset("XXL"), ConfigError);
}

TEST(LearningRate, ContinuousAtBoundaries) {
  OptimConfig c;
  c.warmup_steps = 100;
  c.decay_steps = 1000;
  const double slope = (c.lr_peak - c.lr_init) / 100.0;
  EXPECT_NEAR(lr_at(99, c), lr_at(100, c), 1.5 * slope);
  EXPECT_NEAR(lr_at(999, c), lr_at(1000, c), 1e-8);
  const double peak_cos = c.lr_end + (c.lr_peak - c.lr_end) * 0.5 * (1 + std::cos(std::numbers::pi * 0.25));
  EXPECT_NEAR(lr_at(325, c), peak_cos, 1e-15);
}

TEST(AdamW, ZeroGradientNoDecayIsNoop) {
  OptimConfig c;
  c.weight_decay = 0.0;
  ad::ParamSet p = scalar_param(0.7);
  AdamState s = AdamState::zeros_like(p);
  ASSERT_TRUE(optimizer_step(p, p.zeros_like(), s, 1e-2, c));
  EXPECT_EQ(p["x"](0, 0), 0.7);
}

TEST(AdamW, FirstStepIsSignedLearningRate) {
  OptimConfig c;
  c.weight_decay = 0.0;
  for (double g : {3.0, -0.02}) {
    ad::ParamSet p = scalar_param(1.0);
    AdamState s = AdamState::zeros_like(p);
    ad::ParamSet grad = scalar_param(g);
    ASSERT_TRUE(optimizer_step(p, grad, s, 1e-3, c));
    EXPECT_NEAR(p["x"](0, 0), 1.0 - 1e-3 * g / (std::abs(g) + c.eps), 1e-15);
    EXPECT_EQ(s.t, 1);
  }
}

TEST(AdamW, DecoupledDecay) {
  OptimConfig c;
  c.weight_decay = 0.1;
  ad::ParamSet p = scalar_param(2.0);
  AdamState s = AdamState::zeros_like(p);
  ASSERT_TRUE(optimizer_step(p, p.zeros_like(), s, 0.5, c));
  EXPECT_DOUBLE_EQ(p["x"](0, 0), 2.0 * (1 - 0.5 * 0.1));
}

TEST(AdamW, NonFiniteGradientRejected) {
  set_warnings_silenced(true);
  OptimConfig c;
  ad::ParamSet p = scalar_param(1.0);
  AdamState s = AdamState::zeros_like(p);
  const std::size_t warnings = warning_count();
  ad::ParamSet grad = scalar_param(std::numeric_limits<double>::quiet_NaN());
  EXPECT_FALSE(optimizer_step(p, grad, s, 1e-3, c));
  EXPECT_EQ(p["x"](0, 0), 1.0);
  EXPECT_EQ(s.t, 0);
  EXPECT_EQ(s.m["x"](0, 0), 0.0);
  EXPECT_EQ(warning_count(), warnings + 1);
}

TEST(Clipping, GlobalNorm) {
  ad::ParamSet g;
  g.add("a", ad::Matrix::Constant(1, 1, 3.0));
  g.add("b", ad::Matrix::Constant(1, 1, 4.0));
  EXPECT_DOUBLE_EQ(clip_by_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
  EXPECT_NEAR(g["a"](0, 0), 0.6, 1e-15);
  EXPECT_DOUBLE_EQ(clip_by_global_norm(g, 0.0), global_norm(g));
}

TEST(ModalityDropout, Endpoints) {
  Rng rng(1);
  Observation o;
  o.goal_images.push_back(Image{2, 2, 1, std::vector<float>(4, 1.0f)});
  o.text_tokens = {1, 2, 3};
  std::vector<Transition> window(3);
  for (auto& t : window) t.obs = t.next_obs = o;
  std::vector<Transition> keep = window;
  apply_modality_dropout(keep, DropoutConfig{1.0, 1.0}, rng);
  for (const auto& t : keep) EXPECT_EQ(t.obs, o);
  std::vector<Transition> none = window;
  const TaskKeep k = apply_modality_dropout(none, DropoutConfig{0.0, 0.0}, rng);
  EXPECT_FALSE(k.vision);
  EXPECT_FALSE(k.language);
  for (const auto& t : none) {
    EXPECT_TRUE(t.obs.goal_images.empty());
    EXPECT_TRUE(t.obs.text_tokens.empty());
    EXPECT_TRUE(t.next_obs.text_tokens.empty());
  }
  EXPECT_THROW(DropoutConfig({1.5, 0.0}).validate(), ConfigError);
}

TEST(ModalityDropout, KeepFrequencies) {
  Rng rng(2);
  const DropoutConfig cfg{0.99, 0.9};
  const int n = 10000;
  int vision = 0;
  int language = 0;
  for (int i = 0; i < n; ++i) {
    const TaskKeep k = draw_task_keep(cfg, rng);
    vision += k.vision ? 1 : 0;
    language += k.language ? 1 : 0;
  }
  EXPECT_NEAR(vision, n * 0.99, 3 * std::sqrt(n * 0.99 * 0.01));
  EXPECT_NEAR(language, n * 0.9, 3 * std::sqrt(n * 0.9 * 0.1));
}

class TrainLoopTest : public ::testing::Test {
 protected:
  TabularMDP mdp = lure_chain_mdp();
  TabularEnv env{lure_chain_mdp(), "lure_chain"};
  TabularActorCritic model{4, 4, 21};
  EpisodeStore store{make_behavior_dataset(env, tabular_policy(lure_behavior(mdp)), 300, 3)};

  TrainConfig config(const std::string& preset, std::int64_t steps) const {
    TrainConfig c;
    c.optim.batch_size = 8;
    c.optim.traj_len = 2;
    c.optim.lr_peak = 5e-2;
    c.optim.lr_end = 1e-3;
    c.optim.warmup_steps = 50;
    c.optim.decay_steps = steps;
    c.optim.clip_norm = 0.0;
    c.loss.gamma = mdp.gamma;
    c.loss.eta = 0.02;
    c.loss.target_period = 20;
    c.bins = ValueBins{0.0, 1.0, 21};
    c.steps = steps;
    apply_preset(preset, c, store);
    return c;
  }
};

TEST_F(TrainLoopTest, ZeroStepsLeavesModelUnchanged) {
  const TrainConfig c = config("pac", 100);
  TrainingRun run = make_training_run(model, 1);
  const ad::ParamSet before = run.model.params;
  EXPECT_TRUE(train(model, run, make_sampler(store, c), c, 0).empty());
  EXPECT_EQ(run.model.params, before);
  EXPECT_EQ(run.model.step, 0);
}

TEST_F(TrainLoopTest, DeterministicMetricsAndLog) {
  const TrainConfig c = config("pac", 60);
  std::ostringstream log1;
  std::ostringstream log2;
  TrainingRun r1 = make_training_run(model, 9);
  TrainingRun r2 = make_training_run(model, 9);
  train(model, r1, make_sampler(store, c), c, 60, &log1);
  train(model, r2, make_sampler(store, c), c, 60, &log2);
  EXPECT_EQ(log1.str(), log2.str());
  EXPECT_EQ(r1.model.params, r2.model.params);
  std::istringstream lines(log1.str());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "loss", "rl_term", "bc_term", "td_term", "lr", "grad_norm"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    ++n;
  }
  EXPECT_EQ(n, 60);
  EXPECT_EQ(r1.model.step, 60);
}

TEST_F(TrainLoopTest, BcThenRlBeatsBcOnly) {
  TrainConfig bc = config("bc+q", 1200);
  TrainingRun bc_only = make_training_run(model, 4);
  train(model, bc_only, make_sampler(store, bc), bc, 1200);

  TrainingRun sw = make_training_run(model, 4);
  train(model, sw, make_sampler(store, bc), bc, 600);
  TrainConfig rl = bc;
  rl.loss.alpha = 0.0;
  train(model, sw, make_sampler(store, rl), rl, 600);

  const auto rate = [&](const TrainingRun& r) {
    return evaluate(model_policy(model, r.model.params), env, 400, 77).success_rate;
  };
  EXPECT_GT(rate(sw), rate(bc_only) + 0.15);
}

TEST_F(TrainLoopTest, CheckpointResumeIsBitIdentical) {
  const fs::path dir = temp_dir("resume");
  const TrainConfig c = config("pac", 80);
  TrainingRun straight = make_training_run(model, 5);
  train(model, straight, make_sampler(store, c), c, 80);

  TrainingRun first = make_training_run(model, 5);
  train(model, first, make_sampler(store, c), c, 30);
  save_checkpoint(dir / "ck.pac", Checkpoint{model.config_json(), to_json(c), {{"note", "x"}}, first});
  Checkpoint loaded = load_checkpoint(dir / "ck.pac");
  EXPECT_EQ(loaded.run.model.params, first.model.params);
  EXPECT_EQ(loaded.run.model.target, first.model.target);
  EXPECT_EQ(loaded.run.adam.v, first.adam.v);
  EXPECT_EQ(loaded.run.adam.t, first.adam.t);
  EXPECT_TRUE(loaded.run.rng == first.rng);
  EXPECT_EQ(loaded.extra["note"], "x");
  train(model, loaded.run, make_sampler(store, c), c, 50);
  EXPECT_EQ(loaded.run.model.params, straight.model.params);
  EXPECT_EQ(loaded.run.model.step, 80);
}

TEST_F(TrainLoopTest, CheckpointCorruptionDetected) {
  const fs::path dir = temp_dir("corrupt");
  const TrainConfig c = config("pac", 5);
  TrainingRun run = make_training_run(model, 5);
  run.model.reference = run.model.params;
  save_checkpoint(dir / "ck.pac", Checkpoint{model.config_json(), to_json(c), {}, run});
  const auto bytes = read_bytes(dir / "ck.pac");
  EXPECT_TRUE(load_checkpoint(dir / "ck.pac").run.model.reference.has_value());

  write_bytes(dir / "trunc.pac", std::vector<char>(bytes.begin(), bytes.begin() + std::ptrdiff_t(bytes.size() / 2)));
  EXPECT_THROW(load_checkpoint(dir / "trunc.pac"), IntegrityError);

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  write_bytes(dir / "flip.pac", flipped);
  EXPECT_THROW(load_checkpoint(dir / "flip.pac"), IntegrityError);

  write_bytes(dir / "tiny.pac", std::vector<char>(3, 'x'));
  EXPECT_THROW(load_checkpoint(dir / "tiny.pac"), IntegrityError);
}

TEST_F(TrainLoopTest, CheckpointVersionMismatch) {
  const fs::path dir = temp_dir("version");
  const TrainConfig c = config("pac", 5);
  const TrainingRun run = make_training_run(model, 5);
  save_checkpoint(dir / "ck.pac", Checkpoint{model.config_json(), to_json(c), {}, run});
  auto bytes = read_bytes(dir / "ck.pac");
  bytes[8] = 7;  // version field follows the 8-byte magic
  // Re-seal so that only the version differs.
  const fs::path resealed = dir / "v7.pac";
  bytes.resize(bytes.size() - 4);
  write_bytes(resealed, bytes);
  std::vector<unsigned char> u(bytes.begin(), bytes.end());
  // crc32 of the zlib flavour, computed bitwise here.
  std::uint32_t crc = 0xFFFFFFFFu;
  for (unsigned char ch : u) {
    crc ^= ch;
    for (int k = 0; k < 8; ++k) crc = (crc >> 1) ^ (0xEDB88320u & (0u - (crc & 1u)));
  }
  crc ^= 0xFFFFFFFFu;
  for (int k = 0; k < 4; ++k) bytes.push_back(char((crc >> (8 * k)) & 0xFF));
  write_bytes(resealed, bytes);
  EXPECT_THROW(load_checkpoint(resealed), VersionError);
}

TEST_F(TrainLoopTest, Float32ExportRoundTrip) {
  const fs::path dir = temp_dir("f32");
  Rng rng(3);
  ad::ParamSet p = model.init_params(rng);
  p["tab.pi"](1, 2) = 0.1;  // not representable in float32
  p["tab.q"](0, 0) = -3.5;
  export_parameters_f32(dir / "params", p);
  EXPECT_TRUE(fs::exists(dir / "params.json"));
  EXPECT_TRUE(fs::exists(dir / "params.bin"));
  const ad::ParamSet back = import_parameters_f32(dir / "params");
  ASSERT_TRUE(back.same_structure(p));
  EXPECT_EQ(back["tab.pi"](1, 2), double(float(0.1)));
  EXPECT_EQ(back["tab.q"](0, 0), -3.5);
  export_parameters_f32(dir / "again", back);
  EXPECT_EQ(read_bytes(dir / "params.bin"), read_bytes(dir / "again.bin"));
  auto bin = read_bytes(dir / "params.bin");
  bin.pop_back();
  write_bytes(dir / "params.bin", bin);
  EXPECT_THROW(import_parameters_f32(dir / "params"), IntegrityError);
}

TEST(Presets, Fields) {
  EpisodeStore store;
  TrainConfig c;
  apply_preset("bc+q", c, store);
  EXPECT_EQ(c.loss.alpha, 1.0);
  EXPECT_EQ(c.loss.beta, 38.0);
  apply_preset("filteredbc", c, store);
  EXPECT_TRUE(c.filter_success);
  EXPECT_EQ(c.loss.beta, 0.0);
  apply_preset("pac", c, store);
  EXPECT_EQ(c.loss.alpha, 0.75);
  EXPECT_FALSE(c.filter_success);
  apply_preset("pac+v", c, store);
  EXPECT_EQ(c.objective, Objective::v);
  EXPECT_EQ(c.loss.eta, 1e-4);
  EXPECT_THROW(apply_preset("ppo", c, store), ConfigError);
  EXPECT_EQ(preset_names().size(), 5u);
}

TEST(Presets, AlphaPacLowQualityGroups) {
  std::vector<EpisodeRecord> eps;
  for (int i = 0; i < 10; ++i) {
    EpisodeRecord e;
    e.task_id = "t";
    e.group_id = i < 5 ? "good" : "poor";
    e.success = i < 4 || i == 9;
    e.steps.push_back(EpisodeStep{Observation{{1.0f}, {}, {}, {}}, {0.0f}, 0.0f});
    eps.push_back(e);
  }
  const EpisodeStore store(eps);
  TrainConfig c;
  c.low_quality_groups = {"listed"};
  apply_preset("alpha-pac", c, store);
  EXPECT_EQ(c.loss.alpha_beta("good"), std::make_pair(0.75, 19.0));
  EXPECT_EQ(c.loss.alpha_beta("poor"), std::make_pair(0.0, 1900.0));
  EXPECT_EQ(c.loss.alpha_beta("listed"), std::make_pair(0.0, 1900.0));
}

TEST(ConfigFile, Parsing) {
  const auto kv = parse_config_text("# comment\n a = 1 \nb=two # trailing\n\n");
  EXPECT_EQ(kv.size(), 2u);
  EXPECT_EQ(kv.at("a"), "1");
  EXPECT_EQ(kv.at("b"), "two");
  EXPECT_THROW(parse_config_text("novalue\n"), ConfigError);
  EXPECT_THROW(parse_config_text("a=1\na=2\n"), ConfigError);
  EXPECT_THROW(parse_config_text(" = 3\n"), ConfigError);
  EXPECT_THROW(parse_config_file("/nonexistent/pac.cfg"), ConfigError);
}

TEST(TrainConfigJson, RoundTrip) {
  TrainConfig c;
  c.optim.lr_peak = 3e-3;
  c.loss.group_overrides["g"] = {0.1, 2.0};
  c.bins = ValueBins{-1.0, 2.0, 17};
  c.objective = Objective::v;
  c.steps = 123;
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  nlohmann::json bad = to_json(c);
  bad.erase("loss");
  EXPECT_THROW(train_config_from_json(bad), ConfigError);
}

}  // namespace
}  // namespace pac
