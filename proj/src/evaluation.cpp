#include "xembody/evaluation.hpp"

#include <cstdio>

namespace xembody {

std::uint64_t trial_seed(std::uint64_t eval_seed, int trial) {
  return derive_seed(eval_seed, static_cast<std::uint64_t>(trial));
}

double expert_reward(const std::string& embodiment, std::uint64_t seed) {
  EnvState s = reset(embodiment, seed).state;
  while (!s.done) step(s, expert_action(s));
  return s.reward_total;
}

RolloutResult rollout(RolloutPolicy& policy, const std::string& embodiment, std::uint64_t seed, int history) {
  ResetResult start = reset(embodiment, seed);
  EnvState& state = start.state;
  std::deque<ObservationFrame> buffer{start.frame};
  RolloutResult out;
  out.instruction = state.instruction;
  while (!state.done) {
    policy.privileged_state(state);
    const std::vector<ObservationFrame> frames(buffer.begin(), buffer.end());
    const MatF chunk = policy.act(frames, start.task);
    ++out.forward_passes;
    for (Eigen::Index r = 0; r < chunk.rows() && !state.done; ++r) {
      StepResult sr = step(state, chunk.row(r).transpose());
      buffer.push_back(std::move(sr.frame));
      if (static_cast<int>(buffer.size()) > history) buffer.pop_front();
    }
  }
  out.success = success(state);
  out.steps = state.step;
  out.reward_total = state.reward_total;
  if (embodiment == "quad") {
    out.normalized_reward = state.reward_total / expert_reward(embodiment, seed);
    out.success = out.normalized_reward >= 0.8;
  }
  return out;
}

PolicyReport evaluate_policy(const Policy<float>& policy, const EvalConfig& eval, const std::string& name,
                             const std::string& checkpoint) {
  PolicyReport report;
  report.name = name;
  report.checkpoint = checkpoint;
  double rate_total = 0;
  for (const auto& entry : eval.suite) {
    const EmbodimentSpec& spec = embodiment_spec(entry.embodiment);
    bool has_head = false;
    for (const auto& h : policy.config().heads) has_head = has_head || h.name == spec.head;
    if (!has_head) continue;
    NetworkPolicy actor(policy, spec.head);
    SuiteResult suite;
    suite.embodiment = entry.embodiment;
    double reward = 0;
    for (int t = 0; t < entry.trials; ++t) {
      const RolloutResult r = rollout(actor, entry.embodiment, trial_seed(eval.seed, t), policy.layout().history);
      ++suite.trials;
      suite.successes += r.success ? 1 : 0;
      reward += r.normalized_reward;
      auto& task = suite.per_task[r.instruction];
      ++task.first;
      task.second += r.success ? 1 : 0;
    }
    suite.success_rate = suite.trials > 0 ? static_cast<double>(suite.successes) / suite.trials : 0;
    suite.normalized_reward = suite.trials > 0 ? reward / suite.trials : 0;
    rate_total += suite.success_rate;
    report.suites.push_back(std::move(suite));
  }
  report.mean_success_rate = report.suites.empty() ? 0 : rate_total / static_cast<double>(report.suites.size());
  return report;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json EvalReport::to_json() const {
  Json policies_json = Json::array();
  for (const auto& p : policies) {
    Json suites = Json::array();
    for (const auto& s : p.suites) {
      Json tasks = Json::array();
      for (const auto& [id, ts] : s.per_task) {
        tasks.push_back({{"instruction", id},
                         {"trials", ts.first},
                         {"successes", ts.second},
                         {"success_rate", static_cast<double>(ts.second) / ts.first}});
      }
      Json sj = {{"embodiment", s.embodiment},
                 {"trials", s.trials},
                 {"successes", s.successes},
                 {"success_rate", s.success_rate},
                 {"tasks", tasks}};
      if (s.embodiment == "quad") sj["normalized_reward"] = s.normalized_reward;
      suites.push_back(sj);
    }
    policies_json.push_back({{"name", p.name},
                             {"checkpoint", p.checkpoint},
                             {"config_hash", hex64(p.config_hash)},
                             {"suites", suites},
                             {"mean_success_rate", p.mean_success_rate}});
  }
  return {{"format", "xembody-eval-report/1"}, {"seed", seed}, {"config_hash", hex64(config_hash)}, {"policies", policies_json}};
}

EvalReport evaluate(const std::string& checkpoint, const Config& config,
                    const std::vector<std::pair<std::string, std::string>>& specialists) {
  EvalReport report;
  report.seed = config.eval.seed;
  report.config_hash = config_hash(config);
  auto run = [&](const std::string& name, const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    check_compatible(ckpt, config.policy);
    // Each policy is scored on the embodiments it was trained on; nav data
    // also admits the zero-shot nav-shifted suite.
    EvalConfig eval = config.eval;
    std::erase_if(eval.suite, [&](const EvalEntry& e) {
      for (const auto& m : ckpt.config.mixture.entries) {
        if (m.weight <= 0) continue;
        if (m.embodiment == e.embodiment || (m.embodiment == "nav" && e.embodiment == "nav-shifted")) return false;
      }
      return true;
    });
    Policy<float> policy(ckpt.config.policy, std::move(ckpt.parameters));
    PolicyReport p = evaluate_policy(policy, eval, name, path);
    p.config_hash = config_hash(ckpt.config);
    report.policies.push_back(std::move(p));
  };
  run("cross-embodiment", checkpoint);
  for (const auto& [name, path] : specialists) run(name, path);
  return report;
}

}  // namespace xembody
