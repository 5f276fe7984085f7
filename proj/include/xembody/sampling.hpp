#pragma once

// Turning shards into training examples: windowing, hindsight goal
// relabeling, task-modality masking, augmentation, and the weighted mixture
// sampler that assembles batches.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "xembody/config.hpp"
#include "xembody/heads.hpp"
#include "xembody/rng.hpp"
#include "xembody/shard.hpp"

namespace xembody {

/// Start index of the window ending at each step t in [0, steps): t - k + 1.
/// Negative starts mean that many leading pad steps.
std::vector<int> window_trajectory(int steps, int k);

/// Goal index drawn uniformly from {t, ..., steps - 1}.
int relabel_goal(int t, int steps, Rng& rng);

struct TrainingExample {
  std::string dataset;
  std::string embodiment;
  std::string head;
  /// Oldest to newest; at most k frames.
  std::vector<ObservationFrame> frames;
  TaskSpec task;
  /// One target per frame, aligned with the frames.
  std::vector<StepTarget> targets;
};

/// With an instruction and a goal, keeps exactly one of them (fair coin).
/// Examples without a goal (never goal-conditioned) are left unchanged.
void mask_modality(TrainingExample& example, Rng& rng);

/// Chunk target for step t: actions t .. t+chunk-1, zero-filled and masked
/// past the episode end.
StepTarget chunk_target(const MatF& actions, int t, int chunk);

/// Categorical draw over normalized mixture weights.
class MixtureSampler {
 public:
  explicit MixtureSampler(const MixtureSpec& spec);

  const std::string& sample(Rng& rng) const;
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<double>& probabilities() const { return probabilities_; }

 private:
  std::vector<std::string> names_;
  std::vector<double> probabilities_;
  std::vector<double> cumulative_;
};

std::string sample_mixture(const MixtureSpec& spec, Rng& rng);

/// One augmentation draw: pad-and-crop shift then brightness/contrast jitter.
struct AugmentDraw {
  int dx = 0;
  int dy = 0;
  double scale = 1;
  double shift = 0;
};

AugmentDraw draw_augmentation(const AugmentConfig& cfg, Rng& rng);
Image apply_augmentation(const Image& img, const AugmentDraw& draw);
Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng);

/// Trajectory i is held out for validation when i % 20 == 19 (5%).
bool is_validation_trajectory(std::size_t index);

/// A loaded shard split into training and validation trajectory indices.
struct DataSource {
  DatasetShard shard;
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;

  explicit DataSource(DatasetShard s);
  const std::string& name() const { return shard.header.dataset; }
};

struct ExampleOptions {
  int history = 5;
  int chunk = 1;
  bool augment = false;
  AugmentConfig augmentation;
};

/// The window ending at step `end` of trajectory `traj`, with a relabeled
/// goal, modality masking and (optionally) augmentation, all drawn from `rng`.
TrainingExample make_example(const DataSource& source, std::size_t traj, int end, const ExampleOptions& options,
                             Rng& rng);

/// Draws element-level examples with replacement: dataset by weight, then a
/// uniform trajectory, then a uniform window end. Batch b uses the stream
/// derive_seed(seed, b), so batches never depend on call order.
class BatchSampler {
 public:
  BatchSampler(const std::map<std::string, DataSource>& sources, const MixtureSpec& mixture, const PolicyConfig& policy,
               const TrainConfig& train);

  std::vector<TrainingExample> batch(std::uint64_t index) const;
  /// Fixed held-out windows for one dataset (no augmentation).
  std::vector<TrainingExample> validation_set(const std::string& dataset, int windows, std::uint64_t seed) const;

 private:
  ExampleOptions options_for(const DataSource& source, bool train) const;

  const std::map<std::string, DataSource>& sources_;
  MixtureSampler mixture_;
  PolicyConfig policy_;
  TrainConfig train_;
};

}  // namespace xembody
