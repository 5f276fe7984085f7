#pragma once

// Observation and task tokenizers: one strided conv stack per camera view
// (shared by every embodiment using that view), FiLM language conditioning
// after each conv stage, goal images stacked on the channel axis, and a
// single affine projection per proprio stream.

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xembody/autodiff.hpp"
#include "xembody/config.hpp"
#include "xembody/observation.hpp"
#include "xembody/parameters.hpp"
#include "xembody/rng.hpp"

namespace xembody {

/// Parameter indices of every encoder, resolved against a ParameterSet.
struct EncoderBank {
  struct ImageEncoder {
    std::string view;
    int resolution = 0;
    std::vector<int> kernel, bias, film_gamma, film_beta;
    std::vector<ImageDims> stage_input;
    int project_weight = -1;
    int project_bias = -1;
    int tokens = 0;
  };
  struct ProprioEncoder {
    std::string kind;
    int dim = 0;
    int weight = -1;
    int bias = -1;
  };

  EncoderConfig config;
  int d_model = 0;
  std::map<std::string, ImageEncoder> images;
  std::map<std::string, ProprioEncoder> proprio;
  int language = -1;

  const ImageEncoder& image(const std::string& view) const {
    auto it = images.find(view);
    if (it == images.end()) throw LookupError("no image encoder for view '" + view + "'");
    return it->second;
  }
  const ProprioEncoder& proprio_encoder(const std::string& kind) const {
    auto it = proprio.find(kind);
    if (it == proprio.end()) throw LookupError("no proprio encoder for kind '" + kind + "'");
    return it->second;
  }

  /// Registers freshly initialized encoder parameters in `params`.
  template <class S>
  static EncoderBank create(ParameterSet<S>& params, const EncoderConfig& config, int d_model, Rng& rng);

  /// Resolves indices of an existing parameter set (e.g. a loaded checkpoint).
  template <class S>
  static EncoderBank bind(const ParameterSet<S>& params, const EncoderConfig& config, int d_model);

 private:
  template <class S>
  static EncoderBank build(ParameterSet<S>* params, const ParameterSet<S>* existing, const EncoderConfig& config,
                           int d_model, Rng* rng);
};

template <class S>
EncoderBank EncoderBank::build(ParameterSet<S>* params, const ParameterSet<S>* existing, const EncoderConfig& config,
                               int d_model, Rng* rng) {
  if (config.channels.empty()) throw ConfigError("encoders: at least one conv stage required");
  if (config.kernel < 1 || config.stride < 1) throw ConfigError("encoders: kernel and stride must be positive");
  EncoderBank bank;
  bank.config = config;
  bank.d_model = d_model;
  auto slot = [&](const std::string& name, Eigen::Index rows, Eigen::Index cols, double stddev, bool decay) {
    if (params != nullptr) {
      Mat<S> init = stddev > 0 ? detail::random_matrix<S>(*rng, rows, cols, stddev) : Mat<S>::Zero(rows, cols);
      return params->add(name, std::move(init), decay);
    }
    const int id = existing->find(name);
    const auto& v = (*existing)[id].value;
    if (v.rows() != rows || v.cols() != cols) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(v.rows(), v.cols()) + ", expected " +
                           shape_str(rows, cols));
    }
    return id;
  };

  const int k = config.kernel;
  for (const auto& view : config.views) {
    ImageEncoder enc;
    enc.view = view.name;
    enc.resolution = view.resolution;
    int channels = 6;  // RGB observation + RGB goal slot
    int extent = view.resolution;
    for (std::size_t s = 0; s < config.channels.size(); ++s) {
      const int out = config.channels[s];
      const std::string base = "encoder/" + view.name + "/stage" + std::to_string(s);
      enc.stage_input.push_back({channels, extent, extent});
      enc.kernel.push_back(slot(base + "/kernel", out, static_cast<Eigen::Index>(channels) * k * k,
                                std::sqrt(2.0 / (channels * k * k)), true));
      enc.bias.push_back(slot(base + "/bias", out, 1, 0.0, true));
      enc.film_gamma.push_back(slot(base + "/film_gamma", config.lang_dim, out, 0.0, true));
      enc.film_beta.push_back(slot(base + "/film_beta", config.lang_dim, out, 0.0, true));
      channels = out;
      extent = conv_out_extent(extent, config.stride);
    }
    enc.tokens = extent * extent;
    enc.project_weight = slot("encoder/" + view.name + "/project/weight", channels, d_model, std::sqrt(1.0 / channels), true);
    enc.project_bias = slot("encoder/" + view.name + "/project/bias", 1, d_model, 0.0, true);
    bank.images.emplace(view.name, std::move(enc));
  }
  for (const auto& p : config.proprio) {
    ProprioEncoder enc;
    enc.kind = p.name;
    enc.dim = p.dim;
    enc.weight = slot("proprio/" + p.name + "/weight", p.dim, d_model, std::sqrt(1.0 / p.dim), true);
    enc.bias = slot("proprio/" + p.name + "/bias", 1, d_model, 0.0, true);
    bank.proprio.emplace(p.name, enc);
  }
  bank.language = slot("language/table", config.vocab, config.lang_dim, 1.0, false);
  if (params != nullptr) (*params)[bank.language].value.row(0).setZero();
  return bank;
}

template <class S>
EncoderBank EncoderBank::create(ParameterSet<S>& params, const EncoderConfig& config, int d_model, Rng& rng) {
  return build<S>(&params, nullptr, config, d_model, &rng);
}

template <class S>
EncoderBank EncoderBank::bind(const ParameterSet<S>& params, const EncoderConfig& config, int d_model) {
  return build<S>(nullptr, &params, config, d_model, nullptr);
}

/// Row lookup in the instruction table; id 0 is the masked / absent
/// instruction and maps to the zero vector. Returns [1, lang_dim].
template <class S>
Var<S> embed_language(ParameterLeaves<S>& leaves, const EncoderBank& bank, int id) {
  if (id < 0 || id >= bank.config.vocab) {
    throw RangeError("instruction id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(bank.config.vocab));
  }
  if (id == 0) return leaves.tape().constant(Mat<S>::Zero(1, bank.config.lang_dim));
  return gather_rows(leaves(bank.language), {id});
}

/// FiLM with gamma = lang * W_gamma and beta = lang * W_beta; no bias terms, so
/// a zero embedding is the identity.
template <class S>
Var<S> apply_film(ParameterLeaves<S>& leaves, const Var<S>& features, const Var<S>& lang, int gamma_id, int beta_id) {
  const Var<S> gamma = matmul(lang, leaves(gamma_id));
  const Var<S> beta = matmul(lang, leaves(beta_id));
  return film(features, gamma, beta);
}

template <class S>
Mat<S> stacked_input(const Image& img, const Image* goal, int resolution) {
  if (img.dims.height != resolution || img.dims.width != resolution || img.pixels.rows() != 3 ||
      img.pixels.cols() != img.dims.pixels()) {
    throw DimensionError("image for view '" + img.view + "' is " + std::to_string(img.dims.height) + "x" +
                         std::to_string(img.dims.width) + ", encoder expects " + std::to_string(resolution) + "x" +
                         std::to_string(resolution));
  }
  Mat<S> input = Mat<S>::Zero(6, img.pixels.cols());
  input.topRows(3) = img.pixels.template cast<S>();
  if (goal != nullptr) {
    if (goal->view != img.view) {
      throw DimensionError("goal image view '" + goal->view + "' does not match observation view '" + img.view + "'");
    }
    if (goal->dims != img.dims) throw DimensionError("goal image resolution differs from observation for view '" + img.view + "'");
    input.bottomRows(3) = goal->pixels.template cast<S>();
  }
  return input;
}

/// Conv stack over [image ; goal] (goal slot zero when absent), FiLM after
/// each stage when `lang` is given, then the spatial grid flattened into
/// tokens and projected to d_model. Returns [tokens, d_model].
template <class S>
Var<S> encode_image(ParameterLeaves<S>& leaves, const EncoderBank& bank, const Image& img, const Image* goal,
                    const std::optional<Var<S>>& lang) {
  const auto& enc = bank.image(img.view);
  Var<S> h = leaves.tape().constant(stacked_input<S>(img, goal, enc.resolution));
  const int k = bank.config.kernel;
  for (std::size_t s = 0; s < enc.kernel.size(); ++s) {
    h = conv2d(h, enc.stage_input[s], leaves(enc.kernel[s]), k, k, bank.config.stride);
    h = gelu(add_col_bias(h, leaves(enc.bias[s])));
    if (lang) h = apply_film(leaves, h, *lang, enc.film_gamma[s], enc.film_beta[s]);
  }
  return add_row_bias(matmul(transpose(h), leaves(enc.project_weight)), leaves(enc.project_bias));
}

/// One affine projection to a single [1, d_model] token.
template <class S>
Var<S> encode_proprio(ParameterLeaves<S>& leaves, const EncoderBank& bank, const std::string& kind,
                      const Eigen::VectorXf& values) {
  const auto& enc = bank.proprio_encoder(kind);
  if (values.size() != enc.dim) {
    throw DimensionError("proprio '" + kind + "' expects " + std::to_string(enc.dim) + " values, got " +
                         std::to_string(values.size()));
  }
  Var<S> x = leaves.tape().constant(values.transpose().template cast<S>());
  return add_row_bias(matmul(x, leaves(enc.weight)), leaves(enc.bias));
}

}  // namespace xembody
