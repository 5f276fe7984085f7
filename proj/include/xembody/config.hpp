#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace xembody {

using Json = nlohmann::ordered_json;

enum class GroupKind { ObservationImage, ObservationProprio, Readout };

std::string to_string(GroupKind kind);
GroupKind group_kind_from_string(const std::string& s);

/// One token group repeated at every timestep. `source` names the camera
/// view, proprio stream, or action head the group belongs to.
struct GroupConfig {
  std::string name;
  GroupKind kind = GroupKind::ObservationImage;
  int tokens = 0;
  std::string source;
};

struct LayoutConfig {
  int history = 5;
  std::vector<GroupConfig> groups;
};

struct HeadSpec {
  std::string name;
  int action_dim = 0;
  int chunk = 1;
  /// Informational nominal control rate.
  double rate_hz = 0;
};

struct ViewConfig {
  std::string name;
  int resolution = 24;
};

struct ProprioConfig {
  std::string name;
  int dim = 0;
};

struct EncoderConfig {
  std::vector<ViewConfig> views;
  std::vector<ProprioConfig> proprio;
  std::vector<int> channels{8, 16, 32};
  int kernel = 3;
  int stride = 2;
  int lang_dim = 16;
  int vocab = 32;

  const ViewConfig& view(const std::string& name) const;
  const ProprioConfig& proprio_kind(const std::string& name) const;
  /// Tokens one image of this view yields: ceil(res / stride^stages)^2.
  int image_tokens(const std::string& view) const;
};

struct BackboneConfig {
  int layers = 2;
  int heads = 4;
  int d_model = 64;
  int d_mlp = 256;
};

struct PolicyConfig {
  LayoutConfig layout;
  std::vector<HeadSpec> heads;
  EncoderConfig encoders;
  BackboneConfig backbone;
  double layer_norm_eps = 1e-5;

  const HeadSpec& head(const std::string& name) const;
};

struct MixtureEntry {
  std::string dataset;
  /// Toy embodiment that generates this dataset; empty for catalogue-only entries.
  std::string embodiment;
  double weight = 0;
  int trajectories = 0;
};

struct MixtureSpec {
  std::vector<MixtureEntry> entries;
};

struct AugmentConfig {
  int max_shift = 2;
  double scale_jitter = 0.1;
  double shift_jitter = 0.1;
};

struct TrainConfig {
  double peak_lr = 3e-4;
  int warmup = 2000;
  double weight_decay = 0.1;
  double clip = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch = 64;
  int steps = 10000;
  std::uint64_t seed = 0;
  int validate_every = 1000;
  int log_every = 100;
  /// Held-out windows per embodiment used for the validation MSE.
  int validation_windows = 64;
  AugmentConfig augment;
};

struct EvalEntry {
  std::string embodiment;
  int trials = 100;
};

struct EvalConfig {
  std::vector<EvalEntry> suite;
  std::uint64_t seed = 1000;
};

struct Config {
  PolicyConfig policy;
  MixtureSpec mixture;
  TrainConfig train;
  EvalConfig eval;
};

/// Desk-scale defaults: 4 views at 24x24, d_model 64, 2 layers, k = 5.
Config desk_config();
/// Paper-scale architecture (12 layers, 8 heads, 512 / 2048, 2135-token context).
Config paper_scale_config();
/// The 28-dataset training mixture with its published sampling weights (in
/// percent; they sum to 99.94 and are normalized by the sampler).
MixtureSpec paper_mixture();

Json to_json(const PolicyConfig& c);
Json to_json(const MixtureSpec& m);
Json to_json(const TrainConfig& t);
Json to_json(const EvalConfig& e);
Json to_json(const Config& c);

PolicyConfig policy_config_from_json(const Json& j);
MixtureSpec mixture_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);
EvalConfig eval_config_from_json(const Json& j);
/// Missing sections fall back to desk_config() values.
Config config_from_json(const Json& j);

Config load_config(const std::string& path);
void save_config(const Config& c, const std::string& path);

/// FNV-1a over the canonical JSON dump.
std::uint64_t config_hash(const Config& c);

}  // namespace xembody
