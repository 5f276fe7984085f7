#include "xembody/config.hpp"

#include <fstream>

#include "xembody/errors.hpp"

namespace xembody {

std::string to_string(GroupKind kind) {
  switch (kind) {
    case GroupKind::ObservationImage:
      return "obs-image";
    case GroupKind::ObservationProprio:
      return "obs-proprio";
    case GroupKind::Readout:
      return "readout";
  }
  return "?";
}

GroupKind group_kind_from_string(const std::string& s) {
  if (s == "obs-image") return GroupKind::ObservationImage;
  if (s == "obs-proprio") return GroupKind::ObservationProprio;
  if (s == "readout") return GroupKind::Readout;
  throw ConfigError("unknown group kind '" + s + "'");
}

const ViewConfig& EncoderConfig::view(const std::string& name) const {
  for (const auto& v : views) {
    if (v.name == name) return v;
  }
  throw LookupError("unknown camera view '" + name + "'");
}

const ProprioConfig& EncoderConfig::proprio_kind(const std::string& name) const {
  for (const auto& p : proprio) {
    if (p.name == name) return p;
  }
  throw LookupError("unknown proprio kind '" + name + "'");
}

int EncoderConfig::image_tokens(const std::string& name) const {
  int extent = view(name).resolution;
  for (std::size_t s = 0; s < channels.size(); ++s) extent = (extent + stride - 1) / stride;
  return extent * extent;
}

const HeadSpec& PolicyConfig::head(const std::string& name) const {
  for (const auto& h : heads) {
    if (h.name == name) return h;
  }
  throw LookupError("unknown action head '" + name + "'");
}

namespace {

std::vector<HeadSpec> heads_with_bimanual_chunk(int bimanual_chunk) {
  return {
      {"single-arm", 7, 4, 10.0},
      {"navigation", 2, 4, 4.0},
      {"bimanual", 14, bimanual_chunk, 20.0},
      {"quadruped", 12, 1, 20.0},
  };
}

LayoutConfig layout_for(const EncoderConfig& enc, const std::vector<HeadSpec>& heads, int history) {
  LayoutConfig layout;
  layout.history = history;
  for (const auto& v : enc.views) {
    layout.groups.push_back({"image-" + v.name, GroupKind::ObservationImage, enc.image_tokens(v.name), v.name});
  }
  for (const auto& p : enc.proprio) {
    layout.groups.push_back({"proprio-" + p.name, GroupKind::ObservationProprio, 1, p.name});
  }
  for (const auto& h : heads) {
    layout.groups.push_back({"readout-" + h.name, GroupKind::Readout, h.chunk, h.name});
  }
  return layout;
}

}  // namespace

Config desk_config() {
  Config c;
  auto& p = c.policy;
  p.encoders.views = {{"workspace", 24}, {"navigation", 24}, {"wrist-left", 24}, {"wrist-right", 24}};
  p.encoders.proprio = {{"quadruped", 59}, {"bimanual", 14}};
  p.heads = heads_with_bimanual_chunk(20);
  p.layout = layout_for(p.encoders, p.heads, 5);
  p.backbone = {2, 4, 64, 256};
  c.mixture.entries = {
      {"arm1", "arm1", 0.4, 500},
      {"nav", "nav", 0.3, 500},
      {"bimanual", "bimanual", 0.2, 300},
      {"quad", "quad", 0.1, 300},
  };
  c.eval.suite = {{"arm1", 100}, {"nav", 100}, {"bimanual", 100}, {"quad", 100}, {"nav-shifted", 100}};
  return c;
}

MixtureSpec paper_mixture() {
  MixtureSpec m;
  m.entries = {
      {"Fractal", "", 17, 0},
      {"Kuka", "", 2.2, 0},
      {"BC-Z", "", 2.2, 0},
      {"Stanford Hydra Dataset", "", 0.015, 0},
      {"Language Table", "", 1.5, 0},
      {"Taco Play", "", 1.2, 0},
      {"Furniture Bench Dataset", "", 0.83, 0},
      {"UTAustin Mutex", "", 0.76, 0},
      {"Austin Sailor Dataset", "", 0.74, 0},
      {"Roboturk", "", 0.79, 0},
      {"Toto", "", 0.68, 0},
      {"Austin Sirius Dataset", "", 0.59, 0},
      {"Berkeley Autolab UR5", "", 0.41, 0},
      {"IAMLab CMU Pickup Insert", "", 0.31, 0},
      {"Viola", "", 0.32, 0},
      {"Berkeley Fanuc Manipulation", "", 0.26, 0},
      {"NYU Franka Play Dataset", "", 0.28, 0},
      {"Jaco Play", "", 1.6, 0},
      {"Berkeley Cable Routing", "", 0.089, 0},
      {"Austin Buds Dataset", "", 0.072, 0},
      {"CMU Stretch", "", 0.053, 0},
      {"DLR EDAN Shared Control", "", 0.019, 0},
      {"DROID", "", 0.022, 0},
      {"Bridge", "arm1", 17, 0},
      {"GNM", "nav", 17, 0},
      {"ALOHA-multi-task", "bimanual", 17, 0},
      {"Go1-walk", "quad", 8.5, 0},
      {"Franka-tabletop", "arm1", 8.5, 0},
  };
  return m;
}

Config paper_scale_config() {
  Config c = desk_config();
  auto& p = c.policy;
  // 3 x 100 + 16 image tokens, 2 proprio, 4 + 4 + 100 + 1 readouts = 427 per step.
  p.encoders.views = {{"workspace", 80}, {"navigation", 32}, {"wrist-left", 80}, {"wrist-right", 80}};
  p.encoders.channels = {16, 32, 64};
  p.heads = heads_with_bimanual_chunk(100);
  p.layout = layout_for(p.encoders, p.heads, 5);
  p.backbone = {12, 8, 512, 2048};
  c.train.batch = 512;
  c.train.steps = 300000;
  return c;
}

Json to_json(const PolicyConfig& c) {
  Json j;
  Json groups = Json::array();
  for (const auto& g : c.layout.groups) {
    groups.push_back({{"name", g.name}, {"kind", to_string(g.kind)}, {"tokens", g.tokens}, {"source", g.source}});
  }
  j["layout"] = {{"history", c.layout.history}, {"groups", groups}};
  Json heads = Json::array();
  for (const auto& h : c.heads) {
    heads.push_back({{"name", h.name}, {"action_dim", h.action_dim}, {"chunk", h.chunk}, {"rate_hz", h.rate_hz}});
  }
  j["heads"] = heads;
  Json views = Json::array();
  for (const auto& v : c.encoders.views) views.push_back({{"name", v.name}, {"resolution", v.resolution}});
  Json proprio = Json::array();
  for (const auto& pk : c.encoders.proprio) proprio.push_back({{"name", pk.name}, {"dim", pk.dim}});
  j["encoders"] = {{"views", views},        {"proprio", proprio},         {"channels", c.encoders.channels},
                   {"kernel", c.encoders.kernel}, {"stride", c.encoders.stride}, {"lang_dim", c.encoders.lang_dim},
                   {"vocab", c.encoders.vocab}};
  j["backbone"] = {{"layers", c.backbone.layers},
                   {"heads", c.backbone.heads},
                   {"d_model", c.backbone.d_model},
                   {"d_mlp", c.backbone.d_mlp},
                   {"layer_norm_eps", c.layer_norm_eps}};
  return j;
}

Json to_json(const MixtureSpec& m) {
  Json arr = Json::array();
  for (const auto& e : m.entries) {
    Json item = {{"dataset", e.dataset}, {"weight", e.weight}};
    if (!e.embodiment.empty()) item["embodiment"] = e.embodiment;
    if (e.trajectories > 0) item["trajectories"] = e.trajectories;
    arr.push_back(item);
  }
  return arr;
}

Json to_json(const TrainConfig& t) {
  return {{"peak_lr", t.peak_lr},
          {"warmup", t.warmup},
          {"weight_decay", t.weight_decay},
          {"clip", t.clip},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"batch", t.batch},
          {"steps", t.steps},
          {"seed", t.seed},
          {"validate_every", t.validate_every},
          {"log_every", t.log_every},
          {"validation_windows", t.validation_windows},
          {"augment",
           {{"max_shift", t.augment.max_shift},
            {"scale_jitter", t.augment.scale_jitter},
            {"shift_jitter", t.augment.shift_jitter}}}};
}

Json to_json(const EvalConfig& e) {
  Json suite = Json::array();
  for (const auto& s : e.suite) suite.push_back({{"embodiment", s.embodiment}, {"trials", s.trials}});
  return {{"suite", suite}, {"seed", e.seed}};
}

Json to_json(const Config& c) {
  Json j = to_json(c.policy);
  j["mixture"] = to_json(c.mixture);
  j["train"] = to_json(c.train);
  j["eval"] = to_json(c.eval);
  return j;
}

namespace {

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

PolicyConfig policy_config_from_json(const Json& j) {
  PolicyConfig c = desk_config().policy;
  try {
    if (j.contains("encoders")) {
      const auto& e = j.at("encoders");
      if (e.contains("views")) {
        c.encoders.views.clear();
        for (const auto& v : e.at("views")) c.encoders.views.push_back({v.at("name"), v.value("resolution", 24)});
      }
      if (e.contains("proprio")) {
        c.encoders.proprio.clear();
        for (const auto& p : e.at("proprio")) c.encoders.proprio.push_back({p.at("name"), p.at("dim")});
      }
      read_opt(e, "channels", c.encoders.channels);
      read_opt(e, "kernel", c.encoders.kernel);
      read_opt(e, "stride", c.encoders.stride);
      read_opt(e, "lang_dim", c.encoders.lang_dim);
      read_opt(e, "vocab", c.encoders.vocab);
    }
    if (j.contains("heads")) {
      c.heads.clear();
      for (const auto& h : j.at("heads")) {
        c.heads.push_back({h.at("name"), h.at("action_dim"), h.at("chunk"), h.value("rate_hz", 0.0)});
      }
    }
    if (j.contains("layout")) {
      const auto& l = j.at("layout");
      read_opt(l, "history", c.layout.history);
      if (l.contains("groups")) {
        c.layout.groups.clear();
        for (const auto& g : l.at("groups")) {
          c.layout.groups.push_back(
              {g.at("name"), group_kind_from_string(g.at("kind")), g.at("tokens"), g.value("source", std::string())});
        }
      }
    }
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      read_opt(b, "layers", c.backbone.layers);
      read_opt(b, "heads", c.backbone.heads);
      read_opt(b, "d_model", c.backbone.d_model);
      read_opt(b, "d_mlp", c.backbone.d_mlp);
      read_opt(b, "layer_norm_eps", c.layer_norm_eps);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("policy config: ") + ex.what());
  }
  return c;
}

MixtureSpec mixture_from_json(const Json& j) {
  MixtureSpec m;
  try {
    for (const auto& e : j) {
      m.entries.push_back({e.at("dataset"), e.value("embodiment", std::string()), e.at("weight").get<double>(),
                           e.value("trajectories", 0)});
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("mixture config: ") + ex.what());
  }
  return m;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig t;
  try {
    read_opt(j, "peak_lr", t.peak_lr);
    read_opt(j, "warmup", t.warmup);
    read_opt(j, "weight_decay", t.weight_decay);
    read_opt(j, "clip", t.clip);
    read_opt(j, "beta1", t.beta1);
    read_opt(j, "beta2", t.beta2);
    read_opt(j, "adam_eps", t.adam_eps);
    read_opt(j, "batch", t.batch);
    read_opt(j, "steps", t.steps);
    read_opt(j, "seed", t.seed);
    read_opt(j, "validate_every", t.validate_every);
    read_opt(j, "log_every", t.log_every);
    read_opt(j, "validation_windows", t.validation_windows);
    if (j.contains("augment")) {
      const auto& a = j.at("augment");
      read_opt(a, "max_shift", t.augment.max_shift);
      read_opt(a, "scale_jitter", t.augment.scale_jitter);
      read_opt(a, "shift_jitter", t.augment.shift_jitter);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("train config: ") + ex.what());
  }
  if (t.warmup < 1) throw ConfigError("train config: warmup must be >= 1");
  if (!(t.peak_lr > 0) || t.weight_decay < 0 || !(t.clip > 0)) throw ConfigError("train config: rates must be positive");
  if (t.batch < 1 || t.steps < 0) throw ConfigError("train config: batch must be >= 1 and steps >= 0");
  return t;
}

EvalConfig eval_config_from_json(const Json& j) {
  EvalConfig e;
  try {
    if (j.contains("suite")) {
      for (const auto& s : j.at("suite")) e.suite.push_back({s.at("embodiment"), s.value("trials", 100)});
    }
    read_opt(j, "seed", e.seed);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("eval config: ") + ex.what());
  }
  return e;
}

Config config_from_json(const Json& j) {
  Config c = desk_config();
  c.policy = policy_config_from_json(j);
  if (j.contains("mixture")) c.mixture = mixture_from_json(j.at("mixture"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) c.eval = eval_config_from_json(j.at("eval"));
  return c;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open config '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError("config '" + path + "': " + ex.what());
  }
  return config_from_json(j);
}

void save_config(const Config& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FileError("cannot write config '" + path + "'");
  out << to_json(c).dump(2) << "\n";
}

std::uint64_t config_hash(const Config& c) {
  const std::string text = to_json(c).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace xembody
