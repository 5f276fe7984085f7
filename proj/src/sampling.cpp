#include "xembody/sampling.hpp"

#include <algorithm>
#include <cmath>

namespace xembody {

std::vector<int> window_trajectory(int steps, int k) {
  if (steps < 1) throw ContractError("window_trajectory: trajectory has no steps");
  if (k < 1) throw ContractError("window_trajectory: history must be positive");
  std::vector<int> starts;
  starts.reserve(static_cast<std::size_t>(steps));
  for (int t = 0; t < steps; ++t) starts.push_back(t - k + 1);
  return starts;
}

int relabel_goal(int t, int steps, Rng& rng) {
  if (t < 0 || t >= steps) throw ContractError("relabel_goal: step " + std::to_string(t) + " outside trajectory");
  return t + static_cast<int>(rng.below(static_cast<std::uint64_t>(steps - t)));
}

void mask_modality(TrainingExample& example, Rng& rng) {
  if (example.task.instruction == 0 || !example.task.goal) return;
  if (rng.bernoulli(0.5)) {
    example.task.instruction = 0;
  } else {
    example.task.goal.reset();
  }
}

StepTarget chunk_target(const MatF& actions, int t, int chunk) {
  StepTarget target{MatF::Zero(chunk, actions.cols()), MatF::Zero(chunk, actions.cols())};
  for (int r = 0; r < chunk && t + r < actions.rows(); ++r) {
    target.values.row(r) = actions.row(t + r);
    target.mask.row(r).setOnes();
  }
  return target;
}

MixtureSampler::MixtureSampler(const MixtureSpec& spec) {
  double total = 0;
  for (const auto& e : spec.entries) {
    if (!(e.weight >= 0) || !std::isfinite(e.weight)) throw ConfigError("mixture weight for '" + e.dataset + "' is invalid");
    total += e.weight;
  }
  if (spec.entries.empty() || total <= 0) throw ConfigError("mixture has no positive weight");
  double acc = 0;
  for (const auto& e : spec.entries) {
    names_.push_back(e.dataset);
    probabilities_.push_back(e.weight / total);
    acc += e.weight / total;
    cumulative_.push_back(acc);
  }
}

const std::string& MixtureSampler::sample(Rng& rng) const {
  const double u = rng.uniform();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  std::size_t i = static_cast<std::size_t>(it - cumulative_.begin());
  // Rounding can leave the last cumulative value just under 1; fall back to
  // the last entry with positive weight.
  if (i >= names_.size()) {
    i = names_.size() - 1;
    while (probabilities_[i] == 0) --i;
  }
  return names_[i];
}

std::string sample_mixture(const MixtureSpec& spec, Rng& rng) { return MixtureSampler(spec).sample(rng); }

AugmentDraw draw_augmentation(const AugmentConfig& cfg, Rng& rng) {
  AugmentDraw d;
  d.dx = cfg.max_shift > 0 ? rng.uniform_int(-cfg.max_shift, cfg.max_shift) : 0;
  d.dy = cfg.max_shift > 0 ? rng.uniform_int(-cfg.max_shift, cfg.max_shift) : 0;
  d.scale = 1 + (cfg.scale_jitter > 0 ? rng.uniform(-cfg.scale_jitter, cfg.scale_jitter) : 0);
  d.shift = cfg.shift_jitter > 0 ? rng.uniform(-cfg.shift_jitter, cfg.shift_jitter) : 0;
  return d;
}

Image apply_augmentation(const Image& img, const AugmentDraw& d) {
  const int h = img.dims.height, w = img.dims.width;
  Image out{img.view, img.dims, MatF::Zero(img.pixels.rows(), img.pixels.cols())};
  for (int c = 0; c < img.pixels.rows(); ++c) {
    for (int y = 0; y < h; ++y) {
      const int sy = y + d.dy;
      if (sy < 0 || sy >= h) continue;  // zero padding
      for (int x = 0; x < w; ++x) {
        const int sx = x + d.dx;
        if (sx < 0 || sx >= w) continue;
        out.pixels(c, y * w + x) = img.pixels(c, sy * w + sx);
      }
    }
  }
  out.pixels = (out.pixels.array() * static_cast<float>(d.scale) + static_cast<float>(d.shift)).cwiseMax(0.0f).cwiseMin(1.0f);
  return out;
}

Image augment(const Image& img, const AugmentConfig& cfg, Rng& rng) { return apply_augmentation(img, draw_augmentation(cfg, rng)); }

bool is_validation_trajectory(std::size_t index) { return index % 20 == 19; }

DataSource::DataSource(DatasetShard s) : shard(std::move(s)) {
  for (std::size_t i = 0; i < shard.trajectories.size(); ++i) {
    (is_validation_trajectory(i) ? validation : train).push_back(i);
  }
}

TrainingExample make_example(const DataSource& source, std::size_t traj, int end, const ExampleOptions& options,
                             Rng& rng) {
  const DatasetShard& shard = source.shard;
  const TrajectoryRecord& record = shard.trajectories.at(traj);
  const int steps = record.steps();
  if (end < 0 || end >= steps) throw RangeError("window end " + std::to_string(end) + " outside trajectory");

  TrainingExample ex;
  ex.dataset = shard.header.dataset;
  ex.embodiment = shard.header.embodiment;
  ex.head = shard.header.head;
  const MatF& actions = shard.actions(traj);
  const int start = std::max(0, end - options.history + 1);
  for (int t = start; t <= end; ++t) {
    ex.frames.push_back(shard.frame(traj, t));
    ex.targets.push_back(chunk_target(actions, t, options.chunk));
  }
  ex.task.instruction = record.instruction;
  if (!shard.header.goal_view.empty()) {
    ex.task.goal = shard.image(traj, relabel_goal(end, steps, rng), shard.header.goal_view);
  }
  mask_modality(ex, rng);

  if (options.augment) {
    // One draw per view shared across the window, so the history stays
    // spatially consistent; the goal gets its own draw.
    std::map<std::string, AugmentDraw> draws;
    for (const auto& [view, img] : ex.frames.front().images) draws[view] = draw_augmentation(options.augmentation, rng);
    for (auto& f : ex.frames) {
      for (auto& [view, img] : f.images) img = apply_augmentation(img, draws.at(view));
    }
    if (ex.task.goal) ex.task.goal = augment(*ex.task.goal, options.augmentation, rng);
  }
  return ex;
}

BatchSampler::BatchSampler(const std::map<std::string, DataSource>& sources, const MixtureSpec& mixture,
                           const PolicyConfig& policy, const TrainConfig& train)
    : sources_(sources), mixture_(mixture), policy_(policy), train_(train) {
  for (std::size_t i = 0; i < mixture.entries.size(); ++i) {
    if (mixture_.probabilities()[i] == 0) continue;
    auto it = sources_.find(mixture.entries[i].dataset);
    if (it == sources_.end()) throw ConfigError("mixture dataset '" + mixture.entries[i].dataset + "' has no shard");
    if (it->second.train.empty()) throw ConfigError("dataset '" + mixture.entries[i].dataset + "' has no training trajectories");
    policy_.head(it->second.shard.header.head);
  }
}

ExampleOptions BatchSampler::options_for(const DataSource& source, bool train) const {
  ExampleOptions o;
  o.history = policy_.layout.history;
  o.chunk = policy_.head(source.shard.header.head).chunk;
  o.augment = train;
  o.augmentation = train_.augment;
  return o;
}

std::vector<TrainingExample> BatchSampler::batch(std::uint64_t index) const {
  Rng rng(derive_seed(train_.seed, index));
  std::vector<TrainingExample> out;
  out.reserve(static_cast<std::size_t>(train_.batch));
  for (int b = 0; b < train_.batch; ++b) {
    const DataSource& src = sources_.at(mixture_.sample(rng));
    const std::size_t traj = src.train[static_cast<std::size_t>(rng.below(src.train.size()))];
    const int end = static_cast<int>(rng.below(static_cast<std::uint64_t>(src.shard.trajectories[traj].steps())));
    out.push_back(make_example(src, traj, end, options_for(src, true), rng));
  }
  return out;
}

std::vector<TrainingExample> BatchSampler::validation_set(const std::string& dataset, int windows,
                                                          std::uint64_t seed) const {
  const DataSource& src = sources_.at(dataset);
  std::vector<TrainingExample> out;
  if (src.validation.empty()) return out;
  Rng rng(seed);
  for (int w = 0; w < windows; ++w) {
    const std::size_t traj = src.validation[static_cast<std::size_t>(rng.below(src.validation.size()))];
    const int end = static_cast<int>(rng.below(static_cast<std::uint64_t>(src.shard.trajectories[traj].steps())));
    out.push_back(make_example(src, traj, end, options_for(src, false), rng));
  }
  return out;
}

}  // namespace xembody
