#include <gtest/gtest.h>

#include "xembody/verify.hpp"

using namespace xembody;

namespace {

// Production mask with one extra edge: the first token also sees the last.
BoolMat future_leak(const SlotLayout& layout, const std::vector<bool>& pad) {
  BoolMat m = build_attention_mask(layout, pad);
  const Eigen::Index last = m.rows() - 1;
  m(0, last) = true;
  return m;
}

// Every token may attend to every readout token.
BoolMat readouts_visible(const SlotLayout& layout, const std::vector<bool>& pad) {
  BoolMat m = build_attention_mask(layout, pad);
  for (int c = 0; c < layout.context(); ++c) {
    if (layout.groups[static_cast<std::size_t>(layout.slot(c).group)].kind != GroupKind::Readout) continue;
    for (int r = 0; r < layout.context(); ++r) m(r, c) = true;
  }
  return m;
}

// Padding flags ignored.
BoolMat pads_ignored(const SlotLayout& layout, const std::vector<bool>& pad) {
  return build_attention_mask(layout, std::vector<bool>(pad.size(), false));
}

}  // namespace

TEST(VerifyMasks, ProductionMaskPasses) {
  const VerifyResult r = verify_masks(3, 20);
  EXPECT_TRUE(r.passed) << r.counterexample;
  EXPECT_GT(r.metrics.at("perturbations").get<int>(), 20);
}

TEST(VerifyMasks, DetectsFutureLeak) {
  const VerifyResult r = verify_masks(3, 20, future_leak);
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.counterexample.find("causality"), std::string::npos) << r.counterexample;
}

TEST(VerifyMasks, DetectsAttendedReadouts) {
  const VerifyResult r = verify_masks(3, 20, readouts_visible);
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.counterexample.empty());
}

TEST(VerifyMasks, DetectsIgnoredPadding) {
  const VerifyResult r = verify_masks(3, 20, pads_ignored);
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.counterexample.empty());
}

TEST(VerifyMixture, DeskAndPaperMixturesPass) {
  EXPECT_TRUE(verify_mixture(desk_config().mixture, "desk", 1, 20000, 0.01).passed);
  EXPECT_TRUE(verify_mixture(paper_mixture(), "paper", 1, 20000, 0.01).passed);
}

TEST(VerifyMixture, TightToleranceFailsWithFewDraws) {
  const VerifyResult r = verify_mixture(desk_config().mixture, "desk", 1, 200, 1e-6);
  EXPECT_FALSE(r.passed);
  EXPECT_FALSE(r.counterexample.empty());
}

TEST(VerifyRelabel, UniformAtOnePercent) {
  const VerifyResult r = verify_relabel(5, 8000, 0.01);
  EXPECT_TRUE(r.passed) << r.counterexample;
}

TEST(VerifyFormat, RoundTripsAndCorruptionChecks) {
  const VerifyResult r = verify_format(desk_config(), 2);
  EXPECT_TRUE(r.passed) << r.counterexample;
}
