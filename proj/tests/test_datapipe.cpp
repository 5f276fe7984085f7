#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "xembody/envs.hpp"
#include "xembody/sampling.hpp"
#include "xembody/verify.hpp"

using namespace xembody;

namespace {

// Trajectory whose single 2x2 image stores the step index in every pixel.
DatasetShard indexed_shard(int trajectories, int steps, int instruction) {
  DatasetShard shard;
  shard.header = {"probe", "nav", "navigation", 2, 4, "navigation",
                  {{"navigation", StreamKind::Image, {3, 2, 2}}, {"action", StreamKind::Action, {2}}}};
  for (int i = 0; i < trajectories; ++i) {
    TrajectoryRecord rec{"nav", instruction, {MatF(steps, 12), MatF(steps, 2)}};
    for (int t = 0; t < steps; ++t) {
      rec.streams[0].row(t).setConstant(static_cast<float>(t) / 64);
      rec.streams[1].row(t) << static_cast<float>(t), static_cast<float>(i);
    }
    shard.trajectories.push_back(rec);
  }
  return shard;
}

int goal_index(const TrainingExample& ex) { return static_cast<int>(std::lround(ex.task.goal->pixels(0, 0) * 64)); }

}  // namespace

TEST(Window, StartsAreEndMinusHistoryPlusOne) {
  EXPECT_EQ(window_trajectory(3, 5), (std::vector<int>{-4, -3, -2}));
  EXPECT_EQ(window_trajectory(7, 2), (std::vector<int>{-1, 0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(window_trajectory(0, 5), ContractError);
}

TEST(Window, ExampleFramesAndTargetsAlign) {
  const DataSource src(indexed_shard(2, 10, 1));
  Rng rng(1);
  ExampleOptions opts{5, 3, false, {}};
  const TrainingExample early = make_example(src, 1, 2, opts, rng);
  EXPECT_EQ(early.frames.size(), 3u);
  const TrainingExample late = make_example(src, 1, 9, opts, rng);
  ASSERT_EQ(late.frames.size(), 5u);
  ASSERT_EQ(late.targets.size(), 5u);
  for (int s = 0; s < 5; ++s) {
    EXPECT_FLOAT_EQ(late.frames[static_cast<std::size_t>(s)].images.at("navigation").pixels(0, 0) * 64, 5 + s);
    EXPECT_FLOAT_EQ(late.targets[static_cast<std::size_t>(s)].values(0, 0), 5 + s);
  }
  EXPECT_FLOAT_EQ(late.targets.back().values(0, 1), 1);
  EXPECT_THROW(make_example(src, 0, 10, opts, rng), RangeError);
}

TEST(ChunkTarget, ZeroFillsAndMasksPastTheEnd) {
  MatF actions(5, 2);
  for (int r = 0; r < 5; ++r) actions.row(r) << static_cast<float>(r + 1), -static_cast<float>(r + 1);
  const StepTarget t = chunk_target(actions, 3, 4);
  EXPECT_EQ(t.values.row(0), actions.row(3));
  EXPECT_EQ(t.values.row(1), actions.row(4));
  EXPECT_TRUE(t.values.bottomRows(2).isZero());
  EXPECT_EQ(t.mask.col(0), (Eigen::VectorXf(4) << 1, 1, 0, 0).finished());
}

TEST(Relabel, GoalIndexStaysInTheFuture) {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const int steps = 1 + static_cast<int>(rng.below(30));
    const int t = static_cast<int>(rng.below(static_cast<std::uint64_t>(steps)));
    const int g = relabel_goal(t, steps, rng);
    ASSERT_GE(g, t);
    ASSERT_LT(g, steps);
  }
  EXPECT_EQ(relabel_goal(4, 5, rng), 4);
}

TEST(Relabel, UniformByChiSquare) {
  Rng rng(17);
  const int steps = 12, t = 2, n = 40000;
  std::vector<int> counts(static_cast<std::size_t>(steps - t), 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(relabel_goal(t, steps, rng) - t)];
  const double expected = static_cast<double>(n) / (steps - t);
  double stat = 0;
  for (int c : counts) stat += (c - expected) * (c - expected) / expected;
  EXPECT_LT(stat, chi_square_critical(steps - t - 1, 0.01));
}

TEST(Relabel, ChiSquareCriticalValues) {
  // Textbook upper 1% points.
  EXPECT_NEAR(chi_square_critical(1, 0.01), 6.635, 1e-3);
  EXPECT_NEAR(chi_square_critical(10, 0.01), 23.209, 1e-3);
}

TEST(Relabel, ExamplesCarryGoalsFromTheWindowFuture) {
  const DataSource src(indexed_shard(1, 16, 0));
  Rng rng(9);
  ExampleOptions opts{5, 1, false, {}};
  std::map<int, int> seen;
  for (int i = 0; i < 2000; ++i) {
    const TrainingExample ex = make_example(src, 0, 6, opts, rng);
    ASSERT_TRUE(ex.task.goal.has_value());
    ++seen[goal_index(ex)];
  }
  EXPECT_EQ(seen.begin()->first, 6);
  EXPECT_EQ(seen.rbegin()->first, 15);
  EXPECT_EQ(seen.size(), 10u);
}

TEST(ModalityMask, KeepsExactlyOneModalityAtHalfRate) {
  const DataSource src(indexed_shard(1, 8, 3));
  Rng rng(4);
  ExampleOptions opts{5, 1, false, {}};
  const int n = 10000;
  int goal_kept = 0;
  for (int i = 0; i < n; ++i) {
    const TrainingExample ex = make_example(src, 0, 3, opts, rng);
    const bool has_goal = ex.task.goal.has_value();
    const bool has_instruction = ex.task.instruction != 0;
    ASSERT_NE(has_goal, has_instruction);
    goal_kept += has_goal;
  }
  EXPECT_NEAR(static_cast<double>(goal_kept) / n, 0.5, 0.02);
}

TEST(ModalityMask, NoGoalMeansNoChange) {
  TrainingExample ex;
  ex.task.instruction = 9;
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    mask_modality(ex, rng);
    EXPECT_EQ(ex.task.instruction, 9);
  }
  const DataSource quad(generate_dataset("quad", 2, 5, 32));
  ExampleOptions opts{5, 1, false, {}};
  const TrainingExample q = make_example(quad, 0, 10, opts, rng);
  EXPECT_FALSE(q.task.goal.has_value());
  EXPECT_EQ(q.task.instruction, 9);
}

TEST(Mixture, DeskFrequenciesWithinHalfAPoint) {
  const MixtureSampler sampler(desk_config().mixture);
  Rng rng(2);
  std::map<std::string, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sampler.sample(rng)];
  const std::map<std::string, double> weights{{"arm1", 0.4}, {"nav", 0.3}, {"bimanual", 0.2}, {"quad", 0.1}};
  for (const auto& [name, w] : weights) EXPECT_NEAR(static_cast<double>(counts[name]) / n, w, 0.005) << name;
}

TEST(Mixture, WeightsAreNormalized) {
  MixtureSpec m{{{"a", "", 3, 0}, {"b", "", 1, 0}, {"c", "", 0, 0}}};
  const MixtureSampler s(m);
  EXPECT_DOUBLE_EQ(s.probabilities()[0], 0.75);
  EXPECT_DOUBLE_EQ(s.probabilities()[2], 0.0);
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) EXPECT_NE(s.sample(rng), "c");
}

TEST(Mixture, PaperMixtureHasTwentyEightEntries) {
  const MixtureSpec m = paper_mixture();
  EXPECT_EQ(m.entries.size(), 28u);
  double total = 0;
  for (const auto& e : m.entries) total += e.weight;
  const MixtureSampler s(m);
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    if (m.entries[i].dataset == "Bridge") {
      EXPECT_NEAR(s.probabilities()[i], 17 / total, 1e-12);
    }
  }
}

TEST(Mixture, InvalidWeightsRejected) {
  EXPECT_THROW(MixtureSampler(MixtureSpec{}), ConfigError);
  EXPECT_THROW(MixtureSampler(MixtureSpec{{{"a", "", 0, 0}}}), ConfigError);
  EXPECT_THROW(MixtureSampler(MixtureSpec{{{"a", "", 1, 0}, {"b", "", -1, 0}}}), ConfigError);
  EXPECT_THROW(MixtureSampler(MixtureSpec{{{"a", "", std::nan(""), 0}}}), ConfigError);
}

TEST(Augment, IdentityDrawLeavesImageUnchanged) {
  Image img = Image::zeros("workspace", 4, 4);
  Rng rng(1);
  for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels.data()[i] = static_cast<float>(rng.uniform());
  EXPECT_EQ(apply_augmentation(img, {}).pixels, img.pixels);
}

TEST(Augment, ShiftPadsWithZerosAndJitterClamps) {
  Image img = Image::zeros("workspace", 3, 3);
  for (int p = 0; p < 9; ++p) img.pixels.col(p).setConstant(static_cast<float>(p + 1) / 10);
  const Image shifted = apply_augmentation(img, {1, 0, 1, 0});
  EXPECT_FLOAT_EQ(shifted.pixels(0, 0), 0.2f);  // pixel (0,0) now shows source (0,1)
  EXPECT_FLOAT_EQ(shifted.pixels(0, 2), 0.0f);  // right edge is padding
  const Image bright = apply_augmentation(img, {0, 0, 2, 0.5});
  EXPECT_FLOAT_EQ(bright.pixels(1, 0), 0.7f);
  EXPECT_FLOAT_EQ(bright.pixels(1, 8), 1.0f);
}

TEST(Augment, DrawsStayInConfiguredRange) {
  const AugmentConfig cfg{2, 0.1, 0.1};
  Rng rng(6);
  for (int i = 0; i < 1000; ++i) {
    const AugmentDraw d = draw_augmentation(cfg, rng);
    ASSERT_LE(std::abs(d.dx), 2);
    ASSERT_LE(std::abs(d.dy), 2);
    ASSERT_NEAR(d.scale, 1, 0.1 + 1e-12);
    ASSERT_LE(std::abs(d.shift), 0.1 + 1e-12);
  }
}

TEST(Augment, OneDrawPerViewAcrossTheWindow) {
  // Every frame of the probe shard is the same image, so a shared draw
  // leaves all augmented frames identical.
  DatasetShard shard = indexed_shard(1, 6, 1);
  for (int t = 0; t < 6; ++t) {
    for (int p = 0; p < 4; ++p) shard.trajectories[0].streams[0].row(t).segment(p * 3, 3).setConstant(0.1f * p);
  }
  const DataSource src(shard);
  Rng rng(12);
  const ExampleOptions opts{5, 1, true, {1, 0.2, 0.2}};
  bool changed = false;
  for (int i = 0; i < 20; ++i) {
    const TrainingExample ex = make_example(src, 0, 5, opts, rng);
    for (const auto& f : ex.frames) {
      ASSERT_EQ(f.images.at("navigation").pixels, ex.frames.front().images.at("navigation").pixels);
    }
    changed |= ex.frames.front().images.at("navigation").pixels != shard.image(0, 0, "navigation").pixels;
  }
  EXPECT_TRUE(changed);
}

TEST(Split, EveryTwentiethTrajectoryIsHeldOut) {
  EXPECT_FALSE(is_validation_trajectory(0));
  EXPECT_TRUE(is_validation_trajectory(19));
  EXPECT_TRUE(is_validation_trajectory(39));
  const DataSource src(indexed_shard(100, 3, 1));
  EXPECT_EQ(src.validation.size(), 5u);
  EXPECT_EQ(src.train.size(), 95u);
}

TEST(Batches, DeterministicAndOrderIndependent) {
  Config c = desk_config();
  c.train.batch = 6;
  std::map<std::string, DataSource> sources;
  for (const auto& e : c.mixture.entries) {
    sources.emplace(e.dataset, DataSource(generate_dataset(e.embodiment, 20, 3, 32, e.dataset)));
  }
  const BatchSampler a(sources, c.mixture, c.policy, c.train);
  const BatchSampler b(sources, c.mixture, c.policy, c.train);
  const auto b7 = a.batch(7);
  b.batch(3);
  const auto again = b.batch(7);
  ASSERT_EQ(b7.size(), 6u);
  for (std::size_t i = 0; i < b7.size(); ++i) {
    EXPECT_EQ(b7[i].dataset, again[i].dataset);
    EXPECT_EQ(b7[i].frames.size(), again[i].frames.size());
    EXPECT_EQ(b7[i].targets.back().values, again[i].targets.back().values);
  }
  const auto val = a.validation_set("nav", 8, 5);
  EXPECT_EQ(val.size(), 8u);
  MixtureSpec missing = c.mixture;
  missing.entries.push_back({"ghost", "arm1", 1, 1});
  EXPECT_THROW(BatchSampler(sources, missing, c.policy, c.train), ConfigError);
}

TEST(Shard, RoundTripIsBitExact) {
  const DatasetShard s = generate_dataset("bimanual", 3, 4, 32, "bi");
  const auto bytes = encode_shard(s);
  const DatasetShard back = decode_shard(bytes);
  EXPECT_EQ(back.header.to_json(), s.header.to_json());
  ASSERT_EQ(back.trajectories.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back.trajectories[i].instruction, s.trajectories[i].instruction);
    for (std::size_t k = 0; k < s.trajectories[i].streams.size(); ++k) {
      EXPECT_EQ(back.trajectories[i].streams[k], s.trajectories[i].streams[k]);
    }
  }
  EXPECT_EQ(encode_shard(back), bytes);
}

TEST(Shard, TruncationReportsOffset) {
  const auto bytes = encode_shard(generate_dataset("nav", 2, 4, 32));
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size()) - 9);
  try {
    decode_shard(cut);
    FAIL() << "truncated shard decoded";
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
}

TEST(Shard, BadMagicAndSchemaMismatch) {
  auto bytes = encode_shard(generate_dataset("quad", 1, 4, 32));
  bytes[2] = 'Z';
  EXPECT_THROW(decode_shard(bytes), FormatError);
  const DatasetShard s = generate_dataset("quad", 1, 4, 32);
  TrajectoryRecord bad = s.trajectories[0];
  bad.streams[0] = MatF::Zero(bad.steps(), 58);
  EXPECT_THROW(check_schema(s.header, bad), FormatError);
  Json h = s.header.to_json();
  h["action_dim"] = 11;
  EXPECT_THROW(ShardHeader::from_json(h), FormatError);
}

TEST(Shard, FileRoundTripAndMissingFile) {
  const auto dir = std::filesystem::temp_directory_path() / "xembody_test_shard";
  std::filesystem::create_directories(dir);
  const DatasetShard s = generate_dataset("arm1", 2, 4, 32);
  write_shard(s, (dir / "a.xeds").string());
  EXPECT_EQ(encode_shard(read_shard((dir / "a.xeds").string())), encode_shard(s));
  EXPECT_THROW(read_shard((dir / "missing.xeds").string()), FileError);
  std::filesystem::remove_all(dir);
}
