#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xembody/autodiff.hpp"
#include "xembody/config.hpp"
#include "xembody/parameters.hpp"
#include "xembody/rng.hpp"

namespace xembody {

/// Parameter indices of the transformer stack.
struct BackboneParams {
  struct Layer {
    int ln1_gain, ln1_bias;
    int wq, wk, wv, wo, bo;
    int ln2_gain, ln2_bias;
    int w1, b1, w2, b2;
  };
  BackboneConfig config;
  std::vector<Layer> layers;
  int final_gain = -1;
  int final_bias = -1;

  template <class S>
  static BackboneParams create(ParameterSet<S>& params, const BackboneConfig& config, Rng& rng);
  template <class S>
  static BackboneParams bind(const ParameterSet<S>& params, const BackboneConfig& config);

  /// Scalar count implied by the config alone.
  static std::size_t parameter_count(const BackboneConfig& c) {
    const std::size_t d = static_cast<std::size_t>(c.d_model);
    const std::size_t m = static_cast<std::size_t>(c.d_mlp);
    const std::size_t per_layer = 4 * d + 4 * d * d + d + 2 * d * m + m + d;
    return static_cast<std::size_t>(c.layers) * per_layer + 2 * d;
  }

 private:
  template <class S>
  static BackboneParams build(ParameterSet<S>* params, const ParameterSet<S>* existing, const BackboneConfig& config,
                              Rng* rng);
};

inline void validate(const BackboneConfig& c) {
  if (c.layers < 0 || c.heads < 1 || c.d_model < 1 || c.d_mlp < 1) throw ConfigError("backbone: extents must be positive");
  if (c.d_model % c.heads != 0) {
    throw ConfigError("backbone: d_model " + std::to_string(c.d_model) + " not divisible by " + std::to_string(c.heads) +
                      " heads");
  }
}

template <class S>
BackboneParams BackboneParams::build(ParameterSet<S>* params, const ParameterSet<S>* existing,
                                     const BackboneConfig& config, Rng* rng) {
  validate(config);
  BackboneParams out;
  out.config = config;
  const Eigen::Index d = config.d_model;
  const Eigen::Index m = config.d_mlp;
  enum class Init { Zero, One, Random };
  auto slot = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init, double stddev, bool decay) {
    if (params != nullptr) {
      Mat<S> v;
      switch (init) {
        case Init::Zero:
          v = Mat<S>::Zero(rows, cols);
          break;
        case Init::One:
          v = Mat<S>::Ones(rows, cols);
          break;
        case Init::Random:
          v = detail::random_matrix<S>(*rng, rows, cols, stddev);
          break;
      }
      return params->add(name, std::move(v), decay);
    }
    const int id = existing->find(name);
    const auto& v = (*existing)[id].value;
    if (v.rows() != rows || v.cols() != cols) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(v.rows(), v.cols()) + ", expected " +
                           shape_str(rows, cols));
    }
    return id;
  };
  const double attn_std = std::sqrt(1.0 / static_cast<double>(d));
  const double out_std = attn_std / std::sqrt(2.0 * std::max(1, config.layers));
  for (int l = 0; l < config.layers; ++l) {
    const std::string base = "backbone/layer" + std::to_string(l);
    Layer layer{};
    layer.ln1_gain = slot(base + "/ln1/gain", 1, d, Init::One, 0, false);
    layer.ln1_bias = slot(base + "/ln1/bias", 1, d, Init::Zero, 0, false);
    layer.wq = slot(base + "/attn/wq", d, d, Init::Random, attn_std, true);
    layer.wk = slot(base + "/attn/wk", d, d, Init::Random, attn_std, true);
    layer.wv = slot(base + "/attn/wv", d, d, Init::Random, attn_std, true);
    layer.wo = slot(base + "/attn/wo", d, d, Init::Random, out_std, true);
    layer.bo = slot(base + "/attn/bo", 1, d, Init::Zero, 0, true);
    layer.ln2_gain = slot(base + "/ln2/gain", 1, d, Init::One, 0, false);
    layer.ln2_bias = slot(base + "/ln2/bias", 1, d, Init::Zero, 0, false);
    layer.w1 = slot(base + "/mlp/w1", d, m, Init::Random, attn_std, true);
    layer.b1 = slot(base + "/mlp/b1", 1, m, Init::Zero, 0, true);
    layer.w2 = slot(base + "/mlp/w2", m, d, Init::Random, std::sqrt(1.0 / static_cast<double>(m)) / std::sqrt(2.0 * std::max(1, config.layers)), true);
    layer.b2 = slot(base + "/mlp/b2", 1, d, Init::Zero, 0, true);
    out.layers.push_back(layer);
  }
  out.final_gain = slot("backbone/final/gain", 1, d, Init::One, 0, false);
  out.final_bias = slot("backbone/final/bias", 1, d, Init::Zero, 0, false);
  return out;
}

template <class S>
BackboneParams BackboneParams::create(ParameterSet<S>& params, const BackboneConfig& config, Rng& rng) {
  return build<S>(&params, nullptr, config, &rng);
}

template <class S>
BackboneParams BackboneParams::bind(const ParameterSet<S>& params, const BackboneConfig& config) {
  return build<S>(nullptr, &params, config, nullptr);
}

/// Pre-norm residual transformer: x += attn(ln(x)); x += mlp(ln(x)); final ln.
/// The same mask is used in every layer. Returns [tokens, d_model].
template <class S>
Var<S> backbone_forward(ParameterLeaves<S>& leaves, const BackboneParams& p, const Var<S>& tokens, const BoolMat& mask,
                        S eps = S(1e-5)) {
  if (tokens.cols() != p.config.d_model) {
    throw DimensionError("backbone: tokens have width " + std::to_string(tokens.cols()) + ", d_model is " +
                         std::to_string(p.config.d_model));
  }
  Var<S> x = tokens;
  for (const auto& l : p.layers) {
    const Var<S> h = layer_norm(x, leaves(l.ln1_gain), leaves(l.ln1_bias), eps);
    const Var<S> attn = multi_head_attention(matmul(h, leaves(l.wq)), matmul(h, leaves(l.wk)), matmul(h, leaves(l.wv)),
                                             mask, p.config.heads);
    x = add(x, add_row_bias(matmul(attn, leaves(l.wo)), leaves(l.bo)));
    const Var<S> h2 = layer_norm(x, leaves(l.ln2_gain), leaves(l.ln2_bias), eps);
    const Var<S> hidden = gelu(add_row_bias(matmul(h2, leaves(l.w1)), leaves(l.b1)));
    x = add(x, add_row_bias(matmul(hidden, leaves(l.w2)), leaves(l.b2)));
  }
  return layer_norm(x, leaves(p.final_gain), leaves(p.final_bias), eps);
}

}  // namespace xembody
