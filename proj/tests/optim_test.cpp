#include "clipmatrix/optim/run.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

namespace cm = clipmatrix;
namespace opt = clipmatrix::optim;

namespace {

opt::ParamGroups scalar_groups(float x0, double lr) {
  opt::InitSpec spec;
  spec.shape_count = 1;
  spec.vertex_count = 2;
  spec.texture_height = spec.texture_width = 2;
  for (auto& h : spec.hyper) h.lr = lr;
  auto p = opt::init_params(spec);
  p[opt::kBeta].value[0] = x0;
  return p;
}

opt::GroupGrads zero_grads(const opt::ParamGroups& p) {
  opt::GroupGrads g;
  for (std::size_t i = 0; i < opt::kGroupCount; ++i) g[i].assign(p.groups[i].size(), 0.0);
  return g;
}

std::string small_run_config(const std::filesystem::path& out, int max_steps) {
  return fmt::format(R"({{
    "model": {{"segments": 1, "shape_components": 2}},
    "prompts": [{{"text": "a knight"}}, {{"text": "a robot", "textured": false, "weight": 0.5}}],
    "pose": {{"mode": "per_joint_uniform"}},
    "scorer": {{"type": "random_projection", "embed_dim": 8, "seed": 3}},
    "optim": {{"max_steps": {}, "batch": 2, "groups": {{"texture": {{"lr": 0.05}}, "delta": {{"lr": 1e-3, "clip": 0.5}}}}}},
    "render": {{"train_resolution": [32, 32], "texture_resolution": [8, 8]}},
    "output": {{"dir": "{}", "snapshot_every": 2, "checkpoint_every": 2}},
    "seed": 11
  }})",
                     max_steps, out.string());
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto p = scalar_groups(0.7f, 0.1);
  for (auto& v : p[opt::kTexture].value) v = 0.25f;
  const auto before = p;
  opt::OptState st;
  opt::adam_step(p, zero_grads(p), st);
  for (std::size_t g = 0; g < opt::kGroupCount; ++g) EXPECT_EQ(p.groups[g].value, before.groups[g].value);
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = scalar_groups(1.0f, 0.01);
  auto g = zero_grads(p);
  g[opt::kBeta][0] = 3.7;
  opt::OptState st;
  opt::adam_step(p, g, st);
  EXPECT_NEAR(p[opt::kBeta].value[0], 1.0 - 0.01, 1e-6);
}

TEST(Adam, MinimizesQuadratic) {
  auto p = scalar_groups(1.0f, 0.1);
  opt::OptState st;
  for (int i = 0; i < 200; ++i) {
    auto g = zero_grads(p);
    g[opt::kBeta][0] = 2.0 * p[opt::kBeta].value[0];
    opt::adam_step(p, g, st);
  }
  EXPECT_LT(std::abs(p[opt::kBeta].value[0]), 0.05);
}

TEST(Adam, NonFiniteGradientNamesGroupAndWritesNothing) {
  auto p = scalar_groups(1.0f, 0.1);
  auto g = zero_grads(p);
  g[opt::kBeta][0] = 1.0;
  g[opt::kTexture][5] = std::nan("");
  const auto before = p;
  opt::OptState st;
  try {
    opt::adam_step(p, g, st);
    FAIL();
  } catch (const cm::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("texture"), std::string::npos) << e.what();
  }
  EXPECT_EQ(p, before);
  EXPECT_EQ(st.step, 0u);
}

TEST(Adam, DisabledGroupIsUntouched) {
  auto p = scalar_groups(1.0f, 0.1);
  p[opt::kBeta].enabled = false;
  auto g = zero_grads(p);
  g[opt::kBeta][0] = 1.0;
  g[opt::kDelta][0] = 1.0;
  opt::OptState st;
  opt::adam_step(p, g, st);
  EXPECT_EQ(p[opt::kBeta].value[0], 1.0f);
  EXPECT_EQ(p[opt::kBeta].m[0], 0.0f);
  EXPECT_NE(p[opt::kDelta].value[0], 0.0f);
}

TEST(Adam, ClipBoundsGroupNorm) {
  auto p = scalar_groups(0.0f, 0.1);
  p[opt::kDelta].clip = 1.0;
  cm::Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    auto g = zero_grads(p);
    for (auto& x : g[opt::kDelta]) x = cm::uniform(rng, -10, 10);
    g[opt::kBeta][0] = 50;
    opt::OptState st;
    auto q = p;
    const auto report = opt::adam_step(q, g, st);
    EXPECT_LE(report[opt::kDelta].norm_after, 1.0 + 1e-12);
    EXPECT_EQ(report[opt::kBeta].norm_after, 50.0);
    // The clipped first moment is (1 - beta1) * clipped gradient.
    double m2 = 0;
    for (float m : q[opt::kDelta].m) m2 += static_cast<double>(m) * m;
    EXPECT_LE(std::sqrt(m2), 0.1 * (1.0 + 1e-6));
  }
}

TEST(Decode, TextureStaysStrictlyInsideUnitInterval) {
  auto p = scalar_groups(0.0f, 0.1);
  p[opt::kTexture].value = {-1e6f, 1e6f, -31.f, 31.f, 0.f, 30.f, -30.f, 5.f, -5.f, 1.f, 2.f, 3.f};
  const auto t = opt::decode_texture(p);
  for (double v : t.values) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_EQ(t.values[4], 0.5);
}

TEST(Decode, VjpIsZeroWhereLogitsSaturate) {
  EXPECT_EQ(opt::logistic_grad(31), 0.0);
  EXPECT_EQ(opt::logistic_grad(-1e6), 0.0);
  EXPECT_NEAR(opt::logistic_grad(0), 0.25, 1e-15);
}

// ---------------------------------------------------------------------------

namespace {

opt::Checkpoint sample_checkpoint() {
  opt::Checkpoint ck;
  ck.params = scalar_groups(0.3f, 0.02);
  cm::Rng rng(5);
  for (auto& g : ck.params.groups) {
    for (auto& x : g.value) x = static_cast<float>(cm::normal01(rng));
    for (auto& x : g.m) x = static_cast<float>(cm::normal01(rng));
    for (auto& x : g.v) x = static_cast<float>(cm::uniform01(rng));
  }
  ck.params[opt::kDelta].enabled = false;
  ck.params[opt::kTexture].clip = 2.5;
  ck.state.step = 42;
  ck.state.seed = 77;
  ck.config_hash = 0xdeadbeefcafef00dULL;
  ck.config = {{"seed", 77}};
  ck.scorer_model = "random_projection(dim=8,seed=3)";
  return ck;
}

}  // namespace

TEST(Checkpoint, RoundTripIsExact) {
  const auto ck = sample_checkpoint();
  const auto bytes = opt::serialize_checkpoint(ck);
  EXPECT_TRUE(opt::parse_checkpoint(bytes) == ck);
  EXPECT_EQ(opt::serialize_checkpoint(opt::parse_checkpoint(bytes)), bytes);
}

TEST(Checkpoint, CorruptedPayloadIsRejected) {
  auto bytes = opt::serialize_checkpoint(sample_checkpoint());
  bytes[bytes.size() - 9] ^= 0x40;
  EXPECT_THROW(opt::parse_checkpoint(bytes), cm::LoadError);
}

TEST(Checkpoint, TruncatedFileIsRejected) {
  const auto bytes = opt::serialize_checkpoint(sample_checkpoint());
  for (std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    EXPECT_THROW(opt::parse_checkpoint(bytes.substr(0, keep)), cm::LoadError) << keep;
  }
}

TEST(Checkpoint, UnsupportedVersionIsRejected) {
  auto bytes = opt::serialize_checkpoint(sample_checkpoint());
  const auto at = bytes.find("\"version\":1");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 10] = '7';
  try {
    opt::parse_checkpoint(bytes);
    FAIL();
  } catch (const cm::LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MissingFileIsIoError) {
  cm::testing::TempDir dir;
  EXPECT_THROW(opt::load_checkpoint(dir / "nope.mmc"), cm::IoError);
}

// ---------------------------------------------------------------------------

TEST(Run, ZeroStepsWritesInitialCheckpointAndEmptyLog) {
  cm::testing::TempDir dir;
  auto config = cm::io::parse_config(small_run_config(dir / "out", 0));
  auto scorer = opt::make_scorer(config.scorer);
  const auto result = opt::run_optimization(config, *scorer);
  EXPECT_TRUE(result.rows.empty());
  EXPECT_EQ(result.checkpoint.state.step, 0u);
  EXPECT_TRUE(std::filesystem::exists(dir / "out/checkpoints/step_000000.mmc"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out/snapshots/step_000000.png"));
  EXPECT_EQ(cm::testing::slurp(dir / "out/loss.csv"), "step,total,loss_0,loss_1,reg\n");
  const auto model = opt::build_model(config.model);
  EXPECT_TRUE(opt::load_checkpoint(dir / "out/checkpoints/latest.mmc") ==
              opt::initial_checkpoint(config, model, scorer->model_id()));
}

TEST(Run, LogHasOneRowPerStep) {
  cm::testing::TempDir dir;
  auto config = cm::io::parse_config(small_run_config(dir / "out", 3));
  auto scorer = opt::make_scorer(config.scorer);
  const auto result = opt::run_optimization(config, *scorer);
  ASSERT_EQ(result.rows.size(), 3u);
  std::istringstream log(cm::testing::slurp(dir / "out/loss.csv"));
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, "step,total,loss_0,loss_1,reg");
  for (std::uint64_t s = 0; s < 3; ++s) {
    ASSERT_TRUE(std::getline(log, line));
    EXPECT_EQ(line + "\n", opt::csv_row(result.rows[s]));
    EXPECT_EQ(line.substr(0, line.find(',')), std::to_string(s));
    const auto& r = result.rows[s];
    EXPECT_NEAR(r.total, r.prompt_losses[0] + 0.5 * r.prompt_losses[1] + r.reg, 1e-9);
  }
  EXPECT_FALSE(std::getline(log, line));
  EXPECT_TRUE(std::filesystem::exists(dir / "out/checkpoints/step_000002.mmc"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out/checkpoints/step_000003.mmc"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out/snapshots/step_000002.png"));
}

TEST(Run, ResumeMatchesUninterruptedRun) {
  cm::testing::TempDir dir;
  auto full = cm::io::parse_config(small_run_config(dir / "full", 5));
  auto s1 = opt::make_scorer(full.scorer);
  const auto a = opt::run_optimization(full, *s1);

  auto part = cm::io::parse_config(small_run_config(dir / "part", 2));
  auto s2 = opt::make_scorer(part.scorer);
  opt::run_optimization(part, *s2);
  part.optim.max_steps = 5;
  auto s3 = opt::make_scorer(part.scorer);
  opt::RunOptions resume;
  resume.resume = dir / "part/checkpoints/latest.mmc";
  const auto b = opt::run_optimization(part, *s3, resume);

  EXPECT_EQ(b.rows.size(), 3u);
  EXPECT_EQ(cm::testing::slurp(dir / "full/checkpoints/step_000005.mmc"),
            cm::testing::slurp(dir / "part/checkpoints/step_000005.mmc"));
  EXPECT_EQ(cm::testing::slurp(dir / "full/loss.csv"), cm::testing::slurp(dir / "part/loss.csv"));
}

TEST(Run, ResumeWithDifferentTrajectoryConfigIsRejected) {
  cm::testing::TempDir dir;
  auto config = cm::io::parse_config(small_run_config(dir / "out", 1));
  auto scorer = opt::make_scorer(config.scorer);
  opt::run_optimization(config, *scorer);
  config.seed = 12;
  config.optim.max_steps = 2;
  opt::RunOptions resume;
  resume.resume = dir / "out/checkpoints/latest.mmc";
  EXPECT_THROW(opt::run_optimization(config, *scorer, resume), cm::ConfigError);
}

TEST(Run, DisabledGroupsNeverChange) {
  cm::testing::TempDir dir;
  auto config = cm::io::parse_config(small_run_config(dir / "out", 3));
  config.optim.beta.enabled = false;
  config.optim.light.enabled = false;
  config.optim.material.enabled = false;
  auto scorer = opt::make_scorer(config.scorer);
  const auto model = opt::build_model(config.model);
  const auto init = opt::initial_checkpoint(config, model, scorer->model_id());
  const auto result = opt::run_optimization(config, *scorer);
  for (auto g : {opt::kBeta, opt::kLight, opt::kMaterial}) {
    EXPECT_EQ(result.checkpoint.params[g], init.params[g]) << opt::kGroupNames[g];
  }
  EXPECT_NE(result.checkpoint.params[opt::kTexture].value, init.params[opt::kTexture].value);
}
