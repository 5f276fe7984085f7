#pragma once

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xembody/checkpoint.hpp"
#include "xembody/envs.hpp"
#include "xembody/policy.hpp"

namespace xembody {

/// Anything that maps an observation history and a task to an action chunk.
class RolloutPolicy {
 public:
  virtual ~RolloutPolicy() = default;
  /// Frames are oldest to newest, at most k of them.
  virtual MatF act(std::span<const ObservationFrame> frames, const TaskSpec& task) = 0;
  /// Called before every act(); only the scripted expert uses it.
  virtual void privileged_state(const EnvState&) {}
};

/// A trained network; actions come only from the embodiment's owning head.
class NetworkPolicy : public RolloutPolicy {
 public:
  NetworkPolicy(const Policy<float>& policy, std::string head) : policy_(policy), head_(std::move(head)) {}
  MatF act(std::span<const ObservationFrame> frames, const TaskSpec& task) override {
    return policy_.act(frames, task, head_);
  }

 private:
  const Policy<float>& policy_;
  std::string head_;
};

/// The scripted expert, predicting `chunk` actions ahead.
class ExpertPolicy : public RolloutPolicy {
 public:
  explicit ExpertPolicy(int chunk) : chunk_(chunk) {}
  MatF act(std::span<const ObservationFrame>, const TaskSpec&) override { return expert_chunk(state_, chunk_); }
  void privileged_state(const EnvState& s) override { state_ = s; }

 private:
  int chunk_;
  EnvState state_;
};

struct RolloutResult {
  bool success = false;
  int steps = 0;
  int forward_passes = 0;
  double reward_total = 0;
  /// Quad: reward_total over the expert's on the same seed; otherwise 0.
  double normalized_reward = 0;
  int instruction = 0;
};

/// Receding horizon: act on the last k frames, execute every row of the
/// chunk, append the new frames, repeat until done or the horizon.
RolloutResult rollout(RolloutPolicy& policy, const std::string& embodiment, std::uint64_t seed, int history);

/// Total per-step reward the expert collects from `seed` (quad normalizer).
double expert_reward(const std::string& embodiment, std::uint64_t seed);

/// Seed of trial `i` of an evaluation run.
std::uint64_t trial_seed(std::uint64_t eval_seed, int trial);

struct SuiteResult {
  std::string embodiment;
  int trials = 0;
  int successes = 0;
  double success_rate = 0;
  /// Only meaningful for quad.
  double normalized_reward = 0;
  /// instruction id -> (trials, successes)
  std::map<int, std::pair<int, int>> per_task;
};

struct PolicyReport {
  std::string name;
  std::string checkpoint;
  std::uint64_t config_hash = 0;
  std::vector<SuiteResult> suites;
  double mean_success_rate = 0;
};

/// Runs every suite entry the policy has a head for.
PolicyReport evaluate_policy(const Policy<float>& policy, const EvalConfig& eval, const std::string& name,
                             const std::string& checkpoint = {});

struct EvalReport {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::vector<PolicyReport> policies;

  Json to_json() const;
};

/// Loads the checkpoint (FileError when missing), checks it against
/// `config`, and evaluates it together with any specialist checkpoints.
EvalReport evaluate(const std::string& checkpoint, const Config& config,
                    const std::vector<std::pair<std::string, std::string>>& specialists = {});

/// Hex rendering of a 64-bit hash.
std::string hex64(std::uint64_t v);

}  // namespace xembody
