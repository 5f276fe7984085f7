#pragma once

// On-demand property suites: attention-mask invariants, full-model gradient
// check, mixture and relabel frequency audits, and file-format round trips.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xembody/config.hpp"
#include "xembody/layout.hpp"

namespace xembody {

struct VerifyResult {
  std::string name;
  bool passed = true;
  /// Human-readable lines describing what ran.
  std::vector<std::string> lines;
  /// First failure found; empty when passed.
  std::string counterexample;
  Json metrics = Json::object();
  double seconds = 0;
};

using MaskBuilder = std::function<BoolMat(const SlotLayout&, const std::vector<bool>&)>;

/// Causality, readout passivity and pad invariance on random layouts: every
/// perturbation must leave the protected outputs bit-identical. `mask`
/// replaces the production mask builder (tests inject broken ones).
VerifyResult verify_masks(std::uint64_t seed, int layouts = 50, const MaskBuilder& mask = build_attention_mask);

/// Analytic vs central-difference gradients of the training loss of the
/// full policy at 64-bit on a batch with one example per embodiment.
VerifyResult verify_grads(const Config& config, std::uint64_t seed, int probes = 64, double threshold = 1e-5,
                          double eps = 1e-5);

/// Empirical dataset frequencies vs normalized weights.
VerifyResult verify_mixture(const MixtureSpec& mixture, const std::string& label, std::uint64_t seed,
                            int draws = 100000, double tolerance = 0.005);

/// Chi-square uniformity of relabeled goal indices drawn through the
/// example pipeline.
VerifyResult verify_relabel(std::uint64_t seed, int draws = 40000, double significance = 0.01);

/// XEDS1 / XCKPT1 round trips, schema and truncation errors, and bit-exact
/// forward outputs after a checkpoint reload.
VerifyResult verify_format(const Config& config, std::uint64_t seed);

/// Upper critical value of the chi-square distribution.
double chi_square_critical(int dof, double significance);

}  // namespace xembody
