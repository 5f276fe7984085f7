#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xembody/autodiff.hpp"

namespace xembody {

/// One evaluation of the probed function. `kink_signature` summarizes which
/// side of every non-smooth point (L1 residual sign) the evaluation sits on;
/// a probe whose two sides disagree with the center straddles a kink.
struct FiniteDiffSample {
  double value = 0;
  std::uint64_t kink_signature = 0;
};

struct FiniteDiffProbe {
  int block = 0;
  Eigen::Index index = 0;
};

struct FiniteDiffReport {
  double max_rel_error = 0;
  int probed = 0;
  int skipped = 0;
  FiniteDiffProbe worst;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::vector<std::string> notes;
};

/// Compares analytic gradients against central differences. `params` are
/// perturbed in place and restored. Relative error per probe is
/// |analytic - numeric| / (|numeric| + 1e-12).
inline FiniteDiffReport finite_diff_check(const std::function<FiniteDiffSample()>& f, std::vector<MatD*> params,
                                          const std::vector<MatD>& analytic, const std::vector<FiniteDiffProbe>& probes,
                                          double eps) {
  if (params.size() != analytic.size()) throw ContractError("finite_diff_check: parameter/gradient count mismatch");
  if (!(eps > 0)) throw ContractError("finite_diff_check: eps must be positive");
  auto eval = [&]() {
    FiniteDiffSample s = f();
    if (!std::isfinite(s.value)) throw EvaluationError("finite_diff_check: function returned a non-finite value");
    return s;
  };
  FiniteDiffReport report;
  const FiniteDiffSample center = eval();
  for (const auto& probe : probes) {
    MatD& block = *params.at(static_cast<std::size_t>(probe.block));
    double* slot = block.data() + probe.index;
    const double saved = *slot;
    *slot = saved + eps;
    const FiniteDiffSample plus = eval();
    *slot = saved - eps;
    const FiniteDiffSample minus = eval();
    *slot = saved;
    if (plus.kink_signature != center.kink_signature || minus.kink_signature != center.kink_signature) {
      ++report.skipped;
      report.notes.push_back("skipped block " + std::to_string(probe.block) + " index " +
                             std::to_string(probe.index) + ": probe straddles an L1 kink");
      continue;
    }
    const double numeric = (plus.value - minus.value) / (2 * eps);
    const double exact = analytic[static_cast<std::size_t>(probe.block)].data()[probe.index];
    const double rel = std::abs(exact - numeric) / (std::abs(numeric) + 1e-12);
    ++report.probed;
    if (rel >= report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst = probe;
      report.worst_analytic = exact;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace xembody
