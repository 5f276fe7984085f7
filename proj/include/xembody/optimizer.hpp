#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "xembody/config.hpp"
#include "xembody/parameters.hpp"

namespace xembody {

/// Linear warmup to the peak, then reciprocal square-root decay:
/// peak * min(s / W, sqrt(W / s)). Steps are 1-indexed.
inline double lr_schedule(long step, const TrainConfig& config) {
  if (step < 1) throw ContractError("lr_schedule: steps are 1-indexed, got " + std::to_string(step));
  if (config.warmup < 1) throw ConfigError("lr_schedule: warmup must be at least 1");
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(config.warmup);
  return config.peak_lr * std::min(s / w, std::sqrt(w / s));
}

template <class S>
double global_norm(const std::vector<Mat<S>>& grads) {
  double sq = 0;
  for (const auto& g : grads) sq += g.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

/// Scales every gradient by threshold / norm when the global L2 norm exceeds
/// the threshold. Returns the norm before clipping.
template <class S>
double clip_global_norm(std::vector<Mat<S>>& grads, double threshold) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].allFinite()) throw TrainingAbort("non-finite gradient in parameter block " + std::to_string(i));
  }
  const double norm = global_norm(grads);
  if (norm > threshold) {
    const S factor = static_cast<S>(threshold / norm);
    for (auto& g : grads) g *= factor;
  }
  return norm;
}

template <class S>
struct OptimizerState {
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;
  long step = 0;

  static OptimizerState zeros(const ParameterSet<S>& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
  }
};

/// AdamW with decoupled decay: p -= lr * wd * p, then the bias-corrected
/// adaptive step. Blocks flagged decay = false skip the decay term.
template <class S>
void adamw_step(ParameterSet<S>& params, const std::vector<Mat<S>>& grads, OptimizerState<S>& state, double lr,
                const TrainConfig& config) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adamw: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                         " parameter blocks");
  }
  ++state.step;
  const double bc1 = 1 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1 - std::pow(config.beta2, static_cast<double>(state.step));
  const S b1 = static_cast<S>(config.beta1), b2 = static_cast<S>(config.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[static_cast<int>(i)];
    const auto& g = grads[i];
    if (g.rows() != p.value.rows() || g.cols() != p.value.cols()) {
      throw DimensionError("adamw: gradient " + shape_str(g.rows(), g.cols()) + " for parameter '" + p.name + "' " +
                           shape_str(p.value.rows(), p.value.cols()));
    }
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g.cwiseProduct(g);
    if (p.decay) p.value *= static_cast<S>(1 - lr * config.weight_decay);
    const auto m_hat = m.array() / static_cast<S>(bc1);
    const auto v_hat = v.array() / static_cast<S>(bc2);
    p.value.array() -= static_cast<S>(lr) * m_hat / (v_hat.sqrt() + static_cast<S>(config.adam_eps));
  }
}

}  // namespace xembody
