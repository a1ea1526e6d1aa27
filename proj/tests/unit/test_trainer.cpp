#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gstvla/config_io.hpp"
#include "gstvla/trainer.hpp"

using namespace gstvla;
namespace fs = std::filesystem;

namespace {

TrainConfig tiny() {
  TrainConfig c;
  auto& m = c.model;
  m.gst.width = 16;
  m.gst.exp_hidden = 8;
  m.reasoner.width = 16;
  m.reasoner.layers = 1;
  m.reasoner.heads = 2;
  m.reasoner.ffn_mult = 2;
  m.expert.width = 16;
  m.expert.layers = 1;
  m.expert.heads = 2;
  m.expert.expert_hidden = 16;
  m.rays_per_sample = 16;
  for (auto& s : c.stages) {
    s.steps = 3;
    s.batch = 1;
  }
  c.train_scenes = 3;
  c.val_scenes = 2;
  c.checkpoint_every = 1;
  c.val_flow_draws = 1;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::path(::testing::TempDir()) / ("gstvla_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const Dataset& tiny_data() {
  static const Dataset d = make_dataset(tiny());
  return d;
}

}  // namespace

TEST(Composite, WeightedSum) {
  const StagePlan all = default_plan(Stage::S2);
  EXPECT_NEAR(composite_loss(1, 2, 3, all, {}).total, 2.3, 1e-12);
  EXPECT_EQ(composite_loss(0, 0, 0, all, {}).total, 0.0);
  const StagePlan s1 = default_plan(Stage::S1);
  const Breakdown b = composite_loss(1, 2, 3, s1, {});
  EXPECT_EQ(b.cot, 0.0);
  EXPECT_NEAR(b.total, 1.3, 1e-12);
}

TEST(Composite, BreakdownRecombines) {
  const LossWeights w{0.37, 0.11};
  const Breakdown b = composite_loss(0.123, 4.56, 0.0789, default_plan(Stage::S3), w);
  EXPECT_NEAR(b.flow + w.cot * b.cot + w.depth * b.depth, b.total, 1e-12);
}

TEST(Plans, StageDefaults) {
  const StagePlan s1 = default_plan(Stage::S1), s2 = default_plan(Stage::S2), s3 = default_plan(Stage::S3);
  EXPECT_EQ(s1.steps, 4000u);
  EXPECT_EQ(s2.steps, 2000u);
  EXPECT_EQ(s3.steps, 1000u);
  EXPECT_FALSE(s1.loss_cot);
  EXPECT_TRUE(s1.detach_reasoner);
  EXPECT_EQ(s3.trainable.size(), 3u);
}

TEST(Dataset, DeterministicAndSized) {
  const Dataset a = make_dataset(tiny()), b = make_dataset(tiny());
  ASSERT_EQ(a.train.size(), 3u);
  ASSERT_EQ(a.val.size(), 2u);
  EXPECT_EQ(a.train[1].scene_seed, b.train[1].scene_seed);
  const auto fa = a.train[1].gst_input.features.values(), fb = b.train[1].gst_input.features.values();
  EXPECT_TRUE(std::equal(fa.begin(), fa.end(), fb.begin(), fb.end()));
  EXPECT_NE(a.train[0].scene_seed, a.val[0].scene_seed);
}

TEST(Rollout, ErrorOfShiftedChunk) {
  ActionChunk a, b;
  b.at(0, 0) = 0.01;  // constant 1 cm offset after the first step
  EXPECT_NEAR(rollout_position_error(a, b), 0.01, 1e-15);
  EXPECT_EQ(rollout_position_error(a, a), 0.0);
}

TEST(Trainer, FrozenGroupsKeepChecksums) {
  Trainer tr(tiny(), tiny_data(), fresh_dir("frozen"));
  const StageResult r = tr.run_stage(tiny().stages[0]);
  ASSERT_TRUE(r.frozen_before.count("reasoner"));
  EXPECT_EQ(r.frozen_before.at("reasoner"), r.frozen_after.at("reasoner"));
  EXPECT_EQ(r.log.size(), 3u);
  for (const auto& rec : r.log) EXPECT_EQ(rec.loss.cot, 0.0);
  EXPECT_TRUE(fs::exists(r.checkpoint));
}

TEST(Trainer, DeterministicLogs) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b");
  Trainer(tiny(), tiny_data(), a).run_stage(tiny().stages[1]);
  Trainer(tiny(), tiny_data(), b).run_stage(tiny().stages[1]);
  const std::string la = slurp(a / "metrics_S2.log");
  EXPECT_FALSE(la.empty());
  EXPECT_EQ(la, slurp(b / "metrics_S2.log"));
}

TEST(Trainer, ResumeReproducesUninterruptedRun) {
  const fs::path full = fresh_dir("resume_full"), part = fresh_dir("resume_part");
  Trainer(tiny(), tiny_data(), full).run_stage(tiny().stages[0]);
  {
    Trainer t(tiny(), tiny_data(), part);
    const StageResult r = t.run_stage(tiny().stages[0], std::nullopt, 2);
    EXPECT_EQ(r.log.size(), 2u);
  }
  Trainer t(tiny(), tiny_data(), part);
  t.run_stage(tiny().stages[0], part / "ckpt_S1_latest.bin");
  EXPECT_EQ(slurp(full / "metrics_S1.log"), slurp(part / "metrics_S1.log"));
}

TEST(Trainer, ResumeRejectsOtherStage) {
  const fs::path d = fresh_dir("resume_wrong");
  Trainer t(tiny(), tiny_data(), d);
  t.run_stage(tiny().stages[0], std::nullopt, 1);
  EXPECT_THROW(t.run_stage(tiny().stages[1], d / "ckpt_S1_latest.bin"), std::invalid_argument);
}

TEST(Trainer, SkipS1IsRecorded) {
  const fs::path d = fresh_dir("skip");
  TrainConfig c = apply_flags(tiny(), {{"skip_s1", "true"}});
  for (auto& s : c.stages) s.steps = 1;
  Trainer t(c, tiny_data(), d);
  const auto results = t.run_all();
  EXPECT_EQ(results.size(), 2u);
  EXPECT_NE(slurp(d / "run_plan.txt").find("S1 absent (skip_s1)"), std::string::npos);
  EXPECT_FALSE(fs::exists(d / "metrics_S1.log"));
}

TEST(Trainer, EvaluateProducesFiniteMetrics) {
  Trainer t(tiny(), tiny_data(), fresh_dir("eval"));
  const EvalMetrics m = evaluate(t.model(), tiny_data().val, tiny(), EvalOptions{true, 5, 1});
  EXPECT_EQ(m.samples, 1u);
  EXPECT_TRUE(std::isfinite(m.composite));
  EXPECT_NEAR(m.composite, m.flow + 0.1 * m.depth, 1e-12);
  EXPECT_GE(m.token_acc, 0.0);
  EXPECT_LE(m.token_acc, 1.0);
}

TEST(Flags, KnownFlagsApply) {
  const TrainConfig c = apply_flags(tiny(), {{"pe_mode", "learned2d"}, {"no_cot", "true"}, {"steps_scale", "2"}});
  EXPECT_EQ(c.model.gst.pe_mode, PeMode::learned2d);
  EXPECT_FALSE(c.model.reasoner.flags.any());
  EXPECT_EQ(c.stages[0].steps, 6u);
}

TEST(Flags, RejectsUnknownAndInvalid) {
  EXPECT_THROW(apply_flags(tiny(), {{"warp_drive", "on"}}), std::invalid_argument);
  EXPECT_THROW(apply_flags(tiny(), {{"pool_mode", "max"}}), std::invalid_argument);
  EXPECT_THROW(apply_flags(tiny(), {{"no_cot", "true"}, {"thoughts", "c1"}}), std::invalid_argument);
  EXPECT_THROW(apply_flags(tiny(), {{"steps_scale", "-1"}}), std::invalid_argument);
  EXPECT_THROW(apply_flags(tiny(), {{"token_content", "depth_scalar"}, {"pe_mode", "learned2d"}}), std::invalid_argument);
}

TEST(Ablation, TwoCellsTwoRows) {
  TrainConfig base = tiny();
  for (auto& s : base.stages) s.steps = 1;
  const auto rows = ablation_matrix(base, {{"full", {}}, {"iso", {{"scale_mode", "isotropic"}}}}, fresh_dir("abl"));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].name, "iso");
  const std::string table = format_ablation_table(rows);
  EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 3);
  EXPECT_THROW(ablation_matrix(base, {{"a", {}}, {"a", {}}}, fresh_dir("abl_dup")), std::invalid_argument);
}

TEST(Config, JsonRoundTrip) {
  TrainConfig c = apply_flags(tiny(), {{"opacity_mode", "fixed_one"}, {"thoughts", "c1,c3"}});
  c.weights.cot = 0.25;
  const std::string j = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(j)), j);
}

TEST(Config, PartialAndStrict) {
  const TrainConfig c = config_from_json(R"({"model":{"gst":{"width":64}}})");
  EXPECT_EQ(c.model.gst.width, 64u);
  EXPECT_EQ(c.model.reasoner.width, TrainConfig{}.model.reasoner.width);
  EXPECT_THROW(config_from_json(R"({"model":{"gst":{"wdth":64}}})"), std::invalid_argument);
  EXPECT_THROW(config_from_json(R"({"model":{"gst":{"width":"wide"}}})"), std::invalid_argument);
}

TEST(Config, ShippedFilesParse) {
  const fs::path root = GSTVLA_SOURCE_DIR;
  const TrainConfig acc = load_config(root / "configs/acceptance.json");
  EXPECT_EQ(acc.model.gst.width, 64u);
  EXPECT_EQ(acc.stages.at(0).steps, 4000u);
  const AblationGrid g = load_ablation_grid(root / "configs/ablation_grid.json");
  ASSERT_EQ(g.cells.size(), 6u);
  for (const auto& c : g.cells) EXPECT_NO_THROW(apply_flags(g.base, c.flags)) << c.name;
}
