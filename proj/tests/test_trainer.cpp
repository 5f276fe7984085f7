#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "xembody/checkpoint.hpp"
#include "xembody/envs.hpp"
#include "xembody/optimizer.hpp"
#include "xembody/trainer.hpp"

using namespace xembody;

namespace {

TrainConfig paper_schedule() {
  TrainConfig c;
  c.peak_lr = 3e-4;
  c.warmup = 2000;
  return c;
}

// One-block parameter set holding a column vector.
ParameterSet<double> vector_params(const Eigen::VectorXd& x, bool decay) {
  ParameterSet<double> p;
  p.add("x", Mat<double>(x), decay);
  return p;
}

std::map<std::string, DataSource> tiny_sources(const Config& c, int trajectories) {
  std::map<std::string, DataSource> out;
  for (const auto& e : c.mixture.entries) {
    out.emplace(e.dataset, DataSource(generate_dataset(e.embodiment, trajectories, 3, c.policy.encoders.vocab, e.dataset)));
  }
  return out;
}

Config tiny_run(int steps) {
  Config c = desk_config();
  c.train.batch = 2;
  c.train.steps = steps;
  c.train.warmup = 10;
  c.train.validate_every = 0;
  c.train.validation_windows = 2;
  c.train.log_every = 50;
  return c;
}

}  // namespace

TEST(Schedule, TableValues) {
  const TrainConfig c = paper_schedule();
  EXPECT_DOUBLE_EQ(lr_schedule(2000, c), 3e-4);
  EXPECT_NEAR(lr_schedule(8000, c), 1.5e-4, 1e-18);
  EXPECT_NEAR(lr_schedule(1000, c), 1.5e-4, 1e-18);
}

TEST(Schedule, StepZeroIsContractError) { EXPECT_THROW(lr_schedule(0, paper_schedule()), ContractError); }

TEST(Schedule, ContinuousAtWarmupAndMonotoneOnEachSide) {
  const TrainConfig c = paper_schedule();
  for (long s = 2; s <= 2000; ++s) ASSERT_GT(lr_schedule(s, c), lr_schedule(s - 1, c));
  for (long s = 2001; s <= 20000; ++s) ASSERT_LT(lr_schedule(s, c), lr_schedule(s - 1, c));
  EXPECT_NEAR(lr_schedule(2001, c), lr_schedule(2000, c), 1e-7);
  EXPECT_NEAR(lr_schedule(1999, c), lr_schedule(2000, c), 1e-6);
}

TEST(Clip, NormTwoIsHalved) {
  std::vector<Mat<double>> g{Mat<double>::Constant(2, 2, 1.0)};  // norm 2
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 2.0);
  EXPECT_TRUE(g[0].isApprox(Mat<double>::Constant(2, 2, 0.5)));
}

TEST(Clip, NormHalfIsUnchanged) {
  std::vector<Mat<double>> g{Mat<double>::Constant(1, 1, 0.3), Mat<double>::Constant(1, 1, 0.4)};
  const auto before = g;
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 0.5);
  EXPECT_EQ(g[0], before[0]);
  EXPECT_EQ(g[1], before[1]);
}

TEST(Clip, PostClipNormAtMostOneAndDirectionKept) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Mat<double>> g;
    for (int b = 0; b < 3; ++b) g.push_back(detail::random_matrix<double>(rng, 1 + b, 3, rng.uniform(0.01, 5)));
    const auto before = g;
    clip_global_norm(g, 1.0);
    ASSERT_LE(global_norm(g), 1.0 + 1e-6);
    for (std::size_t b = 0; b < g.size(); ++b) {
      ASSERT_LE(g[b].cwiseAbs().maxCoeff(), before[b].cwiseAbs().maxCoeff());
      ASSERT_NEAR((g[b].array() * before[b].array()).sum() / (g[b].norm() * before[b].norm()), 1.0, 1e-12);
    }
  }
}

TEST(Clip, NonFiniteGradientAborts) {
  std::vector<Mat<double>> g{Mat<double>::Constant(1, 1, std::nan(""))};
  EXPECT_THROW(clip_global_norm(g, 1.0), TrainingAbort);
}

TEST(AdamW, ZeroGradientWithoutDecayKeepsParamsAndShrinksMoments) {
  ParameterSet<double> p = vector_params(Eigen::Vector3d(1, -2, 3), false);
  OptimizerState<double> st = OptimizerState<double>::zeros(p);
  const TrainConfig c;
  adamw_step(p, {Mat<double>::Zero(3, 1)}, st, 1e-3, c);
  EXPECT_EQ(p[0].value, Mat<double>(Eigen::Vector3d(1, -2, 3)));
  EXPECT_TRUE(st.m[0].isZero(0));

  st.m[0].setConstant(1);
  st.v[0].setConstant(1);
  adamw_step(p, {Mat<double>::Zero(3, 1)}, st, 1e-3, c);
  EXPECT_TRUE(st.m[0].isApprox(Mat<double>::Constant(3, 1, 0.9)));
  EXPECT_TRUE(st.v[0].isApprox(Mat<double>::Constant(3, 1, 0.999)));
}

TEST(AdamW, FirstStepIsLrOverOnePlusEps) {
  ParameterSet<double> p = vector_params(Eigen::VectorXd::Constant(1, 0.5), false);
  OptimizerState<double> st = OptimizerState<double>::zeros(p);
  adamw_step(p, {Mat<double>::Constant(1, 1, 1.0)}, st, 1e-3, TrainConfig{});
  EXPECT_DOUBLE_EQ(p[0].value(0, 0), 0.5 - 1e-3 / (1 + 1e-8));
}

TEST(AdamW, DecoupledDecayAppliesBeforeUpdate) {
  ParameterSet<double> p = vector_params(Eigen::VectorXd::Constant(1, 2.0), true);
  OptimizerState<double> st = OptimizerState<double>::zeros(p);
  adamw_step(p, {Mat<double>::Zero(1, 1)}, st, 0.01, TrainConfig{});
  EXPECT_DOUBLE_EQ(p[0].value(0, 0), 2.0 * (1 - 0.01 * 0.1));
}

TEST(AdamW, ShapeMismatchIsDimensionError) {
  ParameterSet<double> p = vector_params(Eigen::Vector3d::Zero(), false);
  OptimizerState<double> st = OptimizerState<double>::zeros(p);
  EXPECT_THROW(adamw_step(p, {Mat<double>::Zero(2, 1)}, st, 1e-3, TrainConfig{}), DimensionError);
}

TEST(AdamW, ConvexQuadraticConverges) {
  ParameterSet<double> p = vector_params(Eigen::Vector3d(1.0, -0.5, 0.25), false);
  OptimizerState<double> st = OptimizerState<double>::zeros(p);
  TrainConfig c;
  c.weight_decay = 0;
  Mat<double> grad;
  for (int s = 1; s <= 200; ++s) {
    grad = 2 * p[0].value;  // d/dx |x|^2
    adamw_step(p, {grad}, st, 0.1 * std::min(1.0, 50.0 / s), c);
  }
  EXPECT_LT((2 * p[0].value).norm(), 1e-3);
}

TEST(Train, SameSeedGivesIdenticalCheckpointBytes) {
  const Config c = tiny_run(100);
  const auto sources = tiny_sources(c, 2);
  const TrainResult a = train(c, sources), b = train(c, sources);
  EXPECT_EQ(encode_checkpoint(a.final_checkpoint), encode_checkpoint(b.final_checkpoint));
  Config other = c;
  other.train.seed = 1;
  EXPECT_NE(encode_checkpoint(train(other, sources).final_checkpoint), encode_checkpoint(a.final_checkpoint));
}

TEST(Train, ValidationMseIsReportedPerDataset) {
  const Config c = tiny_run(3);
  const TrainResult r = train(c, tiny_sources(c, 20));
  const Json& v = r.final_checkpoint.metrics.at("validation_mse");
  for (const auto& e : c.mixture.entries) {
    ASSERT_TRUE(v.contains(e.dataset)) << e.dataset;
    EXPECT_GE(v.at(e.dataset).get<double>(), 0);
  }
  EXPECT_TRUE(r.final_checkpoint.metrics.contains("mean_validation_mse"));
}

TEST(Train, BestCheckpointMinimizesValidationMse) {
  Config c = tiny_run(40);
  c.train.validate_every = 10;
  const TrainResult r = train(c, tiny_sources(c, 20));
  double best = std::numeric_limits<double>::infinity();
  for (const auto& rec : r.records) {
    if (!rec.contains("validation_mse")) continue;
    std::map<std::string, double> m;
    for (const auto& [k, x] : rec.at("validation_mse").items()) m[k] = x.get<double>();
    best = std::min(best, mean_validation_mse(m));
  }
  EXPECT_DOUBLE_EQ(r.best_checkpoint.metrics.at("mean_validation_mse").get<double>(), best);
}

TEST(Train, EmptyMixtureIsConfigError) {
  Config c = tiny_run(1);
  c.mixture.entries.clear();
  EXPECT_THROW(train(c, {}), ConfigError);
}

TEST(Train, LossTrendsDownOnTinyData) {
  Config c = tiny_run(600);
  c.train.peak_lr = 1e-3;
  c.train.warmup = 50;
  c.train.log_every = 100;
  c.mixture.entries = {{"quad", "quad", 1.0, 2}};
  const TrainResult r = train(c, tiny_sources(c, 2));
  std::vector<double> l1;
  for (const auto& rec : r.records) l1.push_back(rec.at("train_l1").get<double>());
  ASSERT_GE(l1.size(), 6u);
  EXPECT_LT(l1.back(), l1.front());
  EXPECT_LT(l1[l1.size() - 1] + l1[l1.size() - 2], l1[0] + l1[1]);
}

TEST(Checkpoint, ReloadReproducesForwardBitExactly) {
  const Config c = tiny_run(5);
  const TrainResult r = train(c, tiny_sources(c, 2));
  const Checkpoint back = decode_checkpoint(encode_checkpoint(r.final_checkpoint));
  Policy<float> a(c.policy, r.final_checkpoint.parameters), b(back.config.policy, back.parameters);
  const ResetResult env = reset("arm1", 1);
  const std::vector<ObservationFrame> frames{env.frame};
  EXPECT_EQ(a.act(frames, env.task, "single-arm"), b.act(frames, env.task, "single-arm"));
  EXPECT_EQ(back.step, 5);
}
