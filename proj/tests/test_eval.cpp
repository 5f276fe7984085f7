#include <gtest/gtest.h>

#include <filesystem>

#include "xembody/checkpoint.hpp"
#include "xembody/evaluation.hpp"

using namespace xembody;

namespace {

// Wraps the expert and records what the policy side of the loop receives.
class RecordingExpert : public ExpertPolicy {
 public:
  RecordingExpert(int chunk, std::string embodiment) : ExpertPolicy(chunk), embodiment_(std::move(embodiment)) {}
  MatF act(std::span<const ObservationFrame> frames, const TaskSpec& task) override {
    max_frames = std::max(max_frames, static_cast<int>(frames.size()));
    const EmbodimentSpec& spec = embodiment_spec(embodiment_);
    for (const auto& f : frames) {
      for (const auto& [view, img] : f.images) {
        foreign_groups += std::find(spec.views.begin(), spec.views.end(), view) == spec.views.end();
      }
      for (const auto& [kind, p] : f.proprio) foreign_groups += kind != spec.proprio;
    }
    return ExpertPolicy::act(frames, task);
  }
  int max_frames = 0;
  int foreign_groups = 0;

 private:
  std::string embodiment_;
};

Checkpoint untrained_checkpoint(const Config& c) {
  Checkpoint ck;
  ck.config = c;
  ck.parameters = Policy<float>(c.policy, 5).parameters();
  ck.optimizer = OptimizerState<float>::zeros(ck.parameters);
  return ck;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("xembody_eval_" + name)).string();
}

}  // namespace

TEST(Rollout, ForwardPassesAreCeilOfEpisodeOverChunk) {
  for (const auto& name : embodiment_names()) {
    for (int chunk : {1, 3, 4, 7}) {
      ExpertPolicy expert(chunk);
      const RolloutResult r = rollout(expert, name, 12, 5);
      EXPECT_EQ(r.forward_passes, (r.steps + chunk - 1) / chunk) << name << " chunk " << chunk;
    }
  }
}

TEST(Rollout, BufferHoldsAtMostKFramesOfRegisteredGroups) {
  for (const auto& name : embodiment_names()) {
    for (int k : {1, 3, 5}) {
      RecordingExpert expert(2, name);
      rollout(expert, name, 4, k);
      EXPECT_LE(expert.max_frames, k);
      EXPECT_EQ(expert.foreign_groups, 0) << name;
    }
  }
}

TEST(Rollout, ExpertNormalizedRewardIsOne) {
  ExpertPolicy expert(1);
  for (int t = 0; t < 5; ++t) EXPECT_DOUBLE_EQ(rollout(expert, "quad", trial_seed(3, t), 5).normalized_reward, 1.0);
}

TEST(Evaluate, ReportIsByteReproducibleAndCountsTrials) {
  Config c = desk_config();
  c.mixture.entries = {{"nav", "nav", 1.0, 10}};
  c.eval.suite = {{"nav", 12}, {"nav-shifted", 5}, {"arm1", 5}};
  const std::string path = temp_path("nav.xckpt");
  save_checkpoint(untrained_checkpoint(c), path);
  const std::string a = evaluate(path, c).to_json().dump(), b = evaluate(path, c).to_json().dump();
  EXPECT_EQ(a, b);
  const Json j = Json::parse(a);
  const Json& suites = j.at("policies").at(0).at("suites");
  ASSERT_EQ(suites.size(), 2u);  // arm1 is not in this checkpoint's mixture
  EXPECT_EQ(suites.at(0).at("trials"), 12);
  EXPECT_EQ(suites.at(1).at("embodiment"), "nav-shifted");
  int per_task = 0;
  for (const auto& t : suites.at(0).at("tasks")) per_task += t.at("trials").get<int>();
  EXPECT_EQ(per_task, 12);
  std::filesystem::remove(path);
}

TEST(Evaluate, SpecialistsAppearSideBySide) {
  Config c = desk_config();
  c.eval.suite = {{"quad", 2}};
  const std::string path = temp_path("cross.xckpt");
  save_checkpoint(untrained_checkpoint(c), path);
  const EvalReport r = evaluate(path, c, {{"quad-specialist", path}});
  ASSERT_EQ(r.policies.size(), 2u);
  EXPECT_EQ(r.policies[1].name, "quad-specialist");
  EXPECT_EQ(r.policies[0].suites[0].normalized_reward, r.policies[1].suites[0].normalized_reward);
  std::filesystem::remove(path);
}

TEST(Evaluate, MissingCheckpointIsFileError) {
  EXPECT_THROW(evaluate(temp_path("absent.xckpt"), desk_config()), FileError);
}
