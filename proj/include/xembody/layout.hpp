#pragma once

#include <string>
#include <vector>

#include "xembody/autodiff.hpp"
#include "xembody/config.hpp"

namespace xembody {

struct SlotGroup {
  std::string name;
  GroupKind kind = GroupKind::ObservationImage;
  int tokens = 0;
  std::string source;
  /// First token of this group within a timestep.
  int offset = 0;
};

struct TokenSlot {
  int step = 0;
  int group = 0;
  int local = 0;
};

/// Fixed per-timestep token map. Group order and offsets are identical at
/// every step, so token index = step * step_tokens + group offset + local.
class SlotLayout {
 public:
  std::vector<SlotGroup> groups;
  int history = 0;
  int step_tokens = 0;

  int context() const { return history * step_tokens; }
  int offset(int step, int group) const { return step * step_tokens + groups[static_cast<std::size_t>(group)].offset; }
  int group_index(const std::string& name) const;
  /// Index of the readout group feeding `head`; LookupError when absent.
  int readout_group(const std::string& head) const;
  TokenSlot slot(int index) const;
  bool is_readout(int index) const;
  int step_of(int index) const { return index / step_tokens; }

  /// Canonical text form stored in checkpoints; equal text means compatible slots.
  std::string canonical() const;
};

/// Validates readout sizes against head chunk sizes and computes offsets.
SlotLayout build_layout(const LayoutConfig& layout, const std::vector<HeadSpec>& heads);
/// As above, and also checks image/proprio group sizes against the encoders.
SlotLayout build_layout(const PolicyConfig& config);

/// Block-wise causal mask over the full context. mask(i, j) permits query i
/// to read key j iff all of:
///  (a) j is not padding, or j == i;
///  (b) i is an observation token: j is an observation token with step(j) <= step(i);
///  (c) i is a readout token: j is an observation token with step(j) <= step(i), or j == i.
BoolMat build_attention_mask(const SlotLayout& layout, const std::vector<bool>& pad);

/// The sub-mask over the listed absolute token indices.
BoolMat restrict_mask(const BoolMat& mask, const std::vector<int>& rows);

/// Text rendering of the layout and its mask for one timestep pair.
std::string render_layout(const SlotLayout& layout);
std::string render_mask(const SlotLayout& layout, const BoolMat& mask, int max_tokens = 120);

}  // namespace xembody
