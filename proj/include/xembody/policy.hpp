#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xembody/assembler.hpp"
#include "xembody/backbone.hpp"
#include "xembody/heads.hpp"

namespace xembody {

/// The cross-embodiment policy: encoders, slot assembly, backbone, heads.
/// Templated on the scalar so the same model runs at 32-bit for training and
/// 64-bit for gradient checks.
template <class S>
class Policy {
 public:
  Policy(const PolicyConfig& config, std::uint64_t seed) : config_(config), layout_(build_layout(config)) {
    Rng rng(seed);
    encoders_ = EncoderBank::create(params_, config.encoders, config.backbone.d_model, rng);
    tables_ = TokenTables::create(params_, layout_, config.backbone.d_model, rng);
    backbone_ = BackboneParams::create(params_, config.backbone, rng);
    for (const auto& h : config.heads) heads_.emplace(h.name, HeadParams::create(params_, h, config.backbone.d_model, rng));
  }

  Policy(const PolicyConfig& config, ParameterSet<S> params)
      : config_(config), layout_(build_layout(config)), params_(std::move(params)) {
    bind();
  }

  Policy(const Policy& other) : config_(other.config_), layout_(other.layout_), params_(other.params_) { bind(); }
  Policy& operator=(const Policy& other) {
    config_ = other.config_;
    layout_ = other.layout_;
    params_ = other.params_;
    bind();
    return *this;
  }

  const PolicyConfig& config() const { return config_; }
  const SlotLayout& layout() const { return layout_; }
  ParameterSet<S>& parameters() { return params_; }
  const ParameterSet<S>& parameters() const { return params_; }
  const EncoderBank& encoders() const { return encoders_; }
  const BackboneParams& backbone() const { return backbone_; }
  const TokenTables& tables() const { return tables_; }
  const HeadParams& head(const std::string& name) const {
    auto it = heads_.find(name);
    if (it == heads_.end()) throw LookupError("unknown action head '" + name + "'");
    return it->second;
  }

  template <class T>
  Policy<T> cast() const {
    return Policy<T>(config_, params_.template cast<T>());
  }

  struct Pass {
    AssembledWindow<S> window;
    Var<S> embeddings;
    ElementPrediction<S> prediction;
  };

  /// One forward pass. Decodes every head in `heads` (all heads when empty)
  /// at every valid step; `owner` marks the element's own head.
  Pass run(ParameterLeaves<S>& leaves, std::span<const ObservationFrame> frames, const TaskSpec& task,
           const std::string& owner, const AssemblyOptions& options = {}) const {
    Pass pass;
    pass.window = assemble_window(leaves, layout_, encoders_, tables_, frames, task, options);
    pass.embeddings =
        backbone_forward(leaves, backbone_, pass.window.tokens, pass.window.attention, static_cast<S>(config_.layer_norm_eps));
    pass.prediction.owner = owner;
    std::vector<std::string> decode_heads = options.heads;
    if (decode_heads.empty()) {
      for (const auto& h : config_.heads) decode_heads.push_back(h.name);
    }
    for (const auto& name : decode_heads) {
      std::vector<Var<S>> chunks;
      for (const auto& r : readout_embeddings(pass.embeddings, pass.window, layout_, name)) {
        chunks.push_back(decode(leaves, head(name), r));
      }
      pass.prediction.chunks.emplace(name, std::move(chunks));
    }
    return pass;
  }

  /// Training-time pass: compact assembly with only the owning head's readouts.
  Pass run_owned(ParameterLeaves<S>& leaves, std::span<const ObservationFrame> frames, const TaskSpec& task,
                 const std::string& owner) const {
    AssemblyOptions opts;
    opts.compact = true;
    opts.heads = {owner};
    return run(leaves, frames, task, owner, opts);
  }

  /// Inference: the owning head's chunk at the newest valid step.
  MatF act(std::span<const ObservationFrame> frames, const TaskSpec& task, const std::string& owner) const {
    Tape<S> tape(false);
    ParameterLeaves<S> leaves(tape, params_);
    Pass pass = run_owned(leaves, frames, task, owner);
    return pass.prediction.chunks.at(owner).back().value().template cast<float>();
  }

 private:
  void bind() {
    const int d = config_.backbone.d_model;
    encoders_ = EncoderBank::bind(params_, config_.encoders, d);
    tables_ = TokenTables::bind(params_, layout_, d);
    backbone_ = BackboneParams::bind(params_, config_.backbone);
    heads_.clear();
    for (const auto& h : config_.heads) heads_.emplace(h.name, HeadParams::bind(params_, h, d));
  }

  PolicyConfig config_;
  SlotLayout layout_;
  ParameterSet<S> params_;
  EncoderBank encoders_;
  TokenTables tables_;
  BackboneParams backbone_;
  std::map<std::string, HeadParams> heads_;
};

}  // namespace xembody
