#include "xembody/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

namespace xembody {

BatchGradients batch_gradients(const Policy<float>& policy, const std::vector<TrainingExample>& batch) {
  if (batch.empty()) throw ContractError("batch_gradients: empty batch");
  BatchGradients out;
  out.grads = policy.parameters().zeros_like();
  const float inv = 1.0f / static_cast<float>(batch.size());
  for (const auto& ex : batch) {
    Tape<float> tape;
    ParameterLeaves<float> leaves(tape, policy.parameters());
    auto pass = policy.run_owned(leaves, ex.frames, ex.task, ex.head);
    const Var<float> loss = element_loss(pass.prediction.chunks.at(ex.head), ex.targets, ErrorMetric::Absolute);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value)) throw TrainingAbort("non-finite training loss on a '" + ex.embodiment + "' example");
    out.loss += value / static_cast<double>(batch.size());
    for (auto& [id, g] : tape.backward(scale(loss, inv))) out.grads[static_cast<std::size_t>(id)] += g;
  }
  return out;
}

double example_mse(const Policy<float>& policy, const TrainingExample& ex) {
  Tape<float> tape(false);
  ParameterLeaves<float> leaves(tape, policy.parameters());
  auto pass = policy.run_owned(leaves, ex.frames, ex.task, ex.head);
  std::vector<MatF> chunks;
  for (const auto& c : pass.prediction.chunks.at(ex.head)) chunks.push_back(c.value());
  return validation_mse(chunks, ex.targets);
}

std::map<std::string, double> validate(const Policy<float>& policy,
                                       const std::map<std::string, std::vector<TrainingExample>>& sets) {
  std::map<std::string, double> out;
  for (const auto& [name, examples] : sets) {
    if (examples.empty()) continue;
    double total = 0;
    for (const auto& ex : examples) total += example_mse(policy, ex);
    out[name] = total / static_cast<double>(examples.size());
  }
  return out;
}

double mean_validation_mse(const std::map<std::string, double>& mse) {
  if (mse.empty()) return std::numeric_limits<double>::infinity();
  double total = 0;
  for (const auto& [name, v] : mse) total += v;
  return total / static_cast<double>(mse.size());
}

std::map<std::string, DataSource> load_sources(const MixtureSpec& mixture, const std::string& dir) {
  std::map<std::string, DataSource> out;
  for (const auto& e : mixture.entries) {
    if (e.weight <= 0 || out.contains(e.dataset)) continue;
    const std::string path = (std::filesystem::path(dir) / (e.dataset + ".xeds")).string();
    out.emplace(e.dataset, DataSource(read_shard(path)));
  }
  return out;
}

namespace {

Json metrics_json(const std::map<std::string, double>& mse, double train_l1) {
  Json v = Json::object();
  for (const auto& [name, x] : mse) v[name] = x;
  return {{"validation_mse", v}, {"mean_validation_mse", mse.empty() ? Json(nullptr) : Json(mean_validation_mse(mse))},
          {"train_l1", train_l1}};
}

}  // namespace

TrainResult train(const Config& config, const std::map<std::string, DataSource>& sources, const TrainOptions& options) {
  const TrainConfig& tc = config.train;
  if (tc.steps < 0 || tc.batch < 1) throw ConfigError("train: steps must be >= 0 and batch >= 1");
  if (!(tc.peak_lr > 0) || !(tc.clip > 0) || tc.weight_decay < 0) throw ConfigError("train: rates must be positive");
  BatchSampler sampler(sources, config.mixture, config.policy, tc);

  std::map<std::string, std::vector<TrainingExample>> validation_sets;
  for (const auto& e : config.mixture.entries) {
    if (e.weight <= 0 || validation_sets.contains(e.dataset)) continue;
    auto set = sampler.validation_set(e.dataset, tc.validation_windows, derive_seed(tc.seed, 0x7A11D));
    if (!set.empty()) validation_sets.emplace(e.dataset, std::move(set));
  }

  Policy<float> policy(config.policy, derive_seed(tc.seed, 0x1417));
  OptimizerState<float> opt = OptimizerState<float>::zeros(policy.parameters());

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    log_file.open((std::filesystem::path(options.out_dir) / "train_log.jsonl").string(), std::ios::trunc);
  }
  TrainResult result;
  auto emit = [&](const Json& record) {
    result.records.push_back(record);
    const std::string line = record.dump();
    if (log_file) log_file << line << "\n" << std::flush;
    if (options.log) *options.log << line << "\n" << std::flush;
  };
  auto snapshot = [&](long step, const Json& metrics) {
    Checkpoint c;
    c.config = config;
    c.parameters = policy.parameters();
    c.optimizer = opt;
    c.step = step;
    c.metrics = metrics;
    return c;
  };
  auto path_for = [&](const std::string& name) { return (std::filesystem::path(options.out_dir) / name).string(); };

  double best = std::numeric_limits<double>::infinity();
  bool have_best = false;
  double window_loss = 0;
  int window_count = 0;
  double last_l1 = std::numeric_limits<double>::quiet_NaN();

  for (long s = 1; s <= tc.steps; ++s) {
    const auto batch = sampler.batch(static_cast<std::uint64_t>(s));
    BatchGradients bg;
    try {
      bg = batch_gradients(policy, batch);
      clip_global_norm(bg.grads, tc.clip);
    } catch (const TrainingAbort& e) {
      if (!options.out_dir.empty()) save_checkpoint(snapshot(s - 1, metrics_json({}, last_l1)), path_for("last_good.xckpt"));
      throw TrainingAbort(std::string(e.what()) + " at step " + std::to_string(s) + "; last good parameters retained");
    }
    const double lr = lr_schedule(s, tc);
    adamw_step(policy.parameters(), bg.grads, opt, lr, tc);
    window_loss += bg.loss;
    ++window_count;

    const bool log_now = tc.log_every > 0 && (s % tc.log_every == 0 || s == tc.steps);
    const bool validate_now = tc.validate_every > 0 && (s % tc.validate_every == 0 || s == tc.steps);
    if (log_now) {
      last_l1 = window_loss / window_count;
      window_loss = 0;
      window_count = 0;
    }
    if (log_now || validate_now) {
      Json record = {{"step", s}, {"lr", lr}, {"train_l1", last_l1}};
      if (validate_now) {
        const auto mse = validate(policy, validation_sets);
        Json v = Json::object();
        for (const auto& [name, x] : mse) v[name] = x;
        record["validation_mse"] = v;
        const Checkpoint c = snapshot(s, metrics_json(mse, last_l1));
        if (options.save_checkpoints && !options.out_dir.empty()) {
          save_checkpoint(c, path_for("step_" + std::to_string(s) + ".xckpt"));
        }
        const double mean = mean_validation_mse(mse);
        if (!have_best || mean < best) {
          best = mean;
          have_best = true;
          result.best_checkpoint = c;
        }
      }
      emit(record);
    }
  }
  if (window_count > 0) last_l1 = window_loss / window_count;
  result.final_train_l1 = last_l1;
  result.final_checkpoint = snapshot(tc.steps, metrics_json(validate(policy, validation_sets), last_l1));
  if (!have_best) result.best_checkpoint = result.final_checkpoint;
  if (!options.out_dir.empty()) {
    save_checkpoint(result.final_checkpoint, path_for("final.xckpt"));
    save_checkpoint(result.best_checkpoint, path_for("best.xckpt"));
  }
  return result;
}

}  // namespace xembody
