#pragma once

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "xembody/checkpoint.hpp"
#include "xembody/policy.hpp"
#include "xembody/sampling.hpp"

namespace xembody {

/// Loss and parameter gradients (float) of one batch. Each element runs on
/// its own tape and gradients are summed in batch order, so the result is a
/// deterministic function of the batch.
struct BatchGradients {
  double loss = 0;
  std::vector<MatF> grads;
};

BatchGradients batch_gradients(const Policy<float>& policy, const std::vector<TrainingExample>& batch);

/// Mean squared action error of the owning head over every valid step.
double example_mse(const Policy<float>& policy, const TrainingExample& example);

/// Validation MSE per dataset over fixed held-out windows.
std::map<std::string, double> validate(const Policy<float>& policy,
                                       const std::map<std::string, std::vector<TrainingExample>>& sets);

/// Mean over datasets; the checkpoint selection criterion.
double mean_validation_mse(const std::map<std::string, double>& mse);

struct TrainOptions {
  /// Directory for checkpoints and train_log.jsonl; empty disables files.
  std::string out_dir;
  /// Extra sink for the line-delimited JSON progress records.
  std::ostream* log = nullptr;
  /// Save a checkpoint at every validation.
  bool save_checkpoints = true;
};

struct TrainResult {
  Checkpoint final_checkpoint;
  /// Argmin of mean validation MSE; the final checkpoint when nothing was validated.
  Checkpoint best_checkpoint;
  std::vector<Json> records;
  /// Training L1 of the last log window.
  double final_train_l1 = 0;
};

/// The full loop: sample, forward/backward, clip, AdamW with the warmup +
/// inverse square-root schedule, periodic validation and checkpointing.
/// A non-finite loss saves the last good parameters and throws TrainingAbort.
TrainResult train(const Config& config, const std::map<std::string, DataSource>& sources,
                  const TrainOptions& options = {});

/// Loads every mixture dataset `<dir>/<dataset>.xeds`.
std::map<std::string, DataSource> load_sources(const MixtureSpec& mixture, const std::string& dir);

}  // namespace xembody
