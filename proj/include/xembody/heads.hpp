#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xembody/autodiff.hpp"
#include "xembody/config.hpp"
#include "xembody/parameters.hpp"
#include "xembody/rng.hpp"

namespace xembody {

/// A row-wise affine map from readout embeddings to one action space.
struct HeadParams {
  HeadSpec spec;
  int weight = -1;
  int bias = -1;

  template <class S>
  static HeadParams create(ParameterSet<S>& params, const HeadSpec& spec, int d_model, Rng& rng) {
    HeadParams h;
    h.spec = spec;
    h.weight = params.add("head/" + spec.name + "/weight",
                          detail::random_matrix<S>(rng, d_model, spec.action_dim, 0.02), true);
    h.bias = params.add("head/" + spec.name + "/bias", Mat<S>::Zero(1, spec.action_dim), true);
    return h;
  }

  template <class S>
  static HeadParams bind(const ParameterSet<S>& params, const HeadSpec& spec, int d_model) {
    HeadParams h;
    h.spec = spec;
    h.weight = params.find("head/" + spec.name + "/weight");
    h.bias = params.find("head/" + spec.name + "/bias");
    const auto& w = params[h.weight].value;
    if (w.rows() != d_model || w.cols() != spec.action_dim) {
      throw DimensionError("head '" + spec.name + "' weight has shape " + shape_str(w.rows(), w.cols()));
    }
    return h;
  }
};

/// readouts [chunk, d_model] -> actions [chunk, action_dim]. No nonlinearity.
template <class S>
Var<S> decode(ParameterLeaves<S>& leaves, const HeadParams& head, const Var<S>& readouts) {
  if (readouts.rows() != head.spec.chunk) {
    throw DimensionError("head '" + head.spec.name + "' decodes chunks of " + std::to_string(head.spec.chunk) +
                         " readouts, got " + std::to_string(readouts.rows()));
  }
  return add_row_bias(matmul(readouts, leaves(head.weight)), leaves(head.bias));
}

/// Action target for one window step: [chunk, action_dim] values and a 0/1
/// mask that is 0 for rows past the episode end.
struct StepTarget {
  MatF values;
  MatF mask;
};

/// One batch element's decoded chunks: head -> one chunk per valid window step.
template <class S>
struct ElementPrediction {
  std::string owner;
  std::map<std::string, std::vector<Var<S>>> chunks;
};

enum class ErrorMetric { Absolute, Squared };

/// Mean error over every supervised entry of the owning head.
template <class S>
Var<S> element_loss(const std::vector<Var<S>>& chunks, const std::vector<StepTarget>& targets, ErrorMetric metric) {
  if (chunks.size() != targets.size()) {
    throw DimensionError("loss: " + std::to_string(chunks.size()) + " predicted steps vs " +
                         std::to_string(targets.size()) + " target steps");
  }
  if (chunks.empty()) throw ContractError("loss: element has no valid steps");
  std::vector<Var<S>> parts;
  double count = 0;
  for (std::size_t s = 0; s < chunks.size(); ++s) {
    const Mat<S> target = targets[s].values.template cast<S>();
    const Mat<S> weight = targets[s].mask.template cast<S>();
    count += targets[s].mask.sum();
    parts.push_back(metric == ErrorMetric::Absolute ? weighted_abs_error(chunks[s], target, weight)
                                                    : weighted_squared_error(chunks[s], target, weight));
  }
  if (count <= 0) throw ContractError("loss: element has no supervised action entries");
  Var<S> total = parts.front();
  for (std::size_t s = 1; s < parts.size(); ++s) total = add(total, parts[s]);
  return scale(total, static_cast<S>(1.0 / count));
}

/// Per-element mean over the element's own head, then mean over the batch.
/// Heads an element does not own never enter its loss.
template <class S>
Var<S> batch_loss(std::span<const ElementPrediction<S>> predictions,
                  std::span<const std::vector<StepTarget>> targets, ErrorMetric metric) {
  if (predictions.size() != targets.size()) throw ContractError("loss: predictions and targets differ in batch size");
  if (predictions.empty()) throw ContractError("loss: empty batch");
  std::vector<Var<S>> per_element;
  for (std::size_t b = 0; b < predictions.size(); ++b) {
    auto it = predictions[b].chunks.find(predictions[b].owner);
    if (predictions[b].owner.empty() || it == predictions[b].chunks.end()) {
      throw ContractError("loss: batch element " + std::to_string(b) + " owns no predicted head");
    }
    per_element.push_back(element_loss(it->second, targets[b], metric));
  }
  Var<S> total = per_element.front();
  for (std::size_t b = 1; b < per_element.size(); ++b) total = add(total, per_element[b]);
  return scale(total, static_cast<S>(1.0 / static_cast<double>(per_element.size())));
}

template <class S>
Var<S> training_loss(std::span<const ElementPrediction<S>> predictions, std::span<const std::vector<StepTarget>> targets) {
  return batch_loss(predictions, targets, ErrorMetric::Absolute);
}

/// Plain-value mean error of one element; used for validation metrics.
inline double element_error(const std::vector<MatF>& chunks, const std::vector<StepTarget>& targets, ErrorMetric metric) {
  if (chunks.size() != targets.size()) throw DimensionError("error: predicted and target step counts differ");
  double total = 0;
  double count = 0;
  for (std::size_t s = 0; s < chunks.size(); ++s) {
    if (chunks[s].rows() != targets[s].values.rows() || chunks[s].cols() != targets[s].values.cols()) {
      throw DimensionError("error: chunk " + shape_str(chunks[s].rows(), chunks[s].cols()) + " vs target " +
                           shape_str(targets[s].values.rows(), targets[s].values.cols()));
    }
    const Eigen::ArrayXXd diff = (chunks[s] - targets[s].values).template cast<double>().array();
    const Eigen::ArrayXXd w = targets[s].mask.template cast<double>().array();
    total += metric == ErrorMetric::Absolute ? (diff.abs() * w).sum() : (diff.square() * w).sum();
    count += w.sum();
  }
  if (count <= 0) throw ContractError("error: no supervised action entries");
  return total / count;
}

inline double validation_mse(const std::vector<MatF>& chunks, const std::vector<StepTarget>& targets) {
  return element_error(chunks, targets, ErrorMetric::Squared);
}

/// Hash of the sign pattern of every supervised residual. Two evaluations
/// with equal signatures sit on the same smooth piece of the L1 loss.
template <class S>
std::uint64_t residual_sign_signature(const std::vector<Mat<S>>& chunks, const std::vector<StepTarget>& targets,
                                      std::uint64_t h = 1469598103934665603ull) {
  for (std::size_t s = 0; s < chunks.size(); ++s) {
    const auto& t = targets[s];
    for (Eigen::Index i = 0; i < t.values.size(); ++i) {
      if (t.mask.data()[i] == 0) continue;
      const double d = static_cast<double>(chunks[s].data()[i]) - static_cast<double>(t.values.data()[i]);
      const unsigned char sign = d > 0 ? 1 : (d < 0 ? 2 : 3);
      h = (h ^ sign) * 1099511628211ull;
    }
  }
  return h;
}

}  // namespace xembody
