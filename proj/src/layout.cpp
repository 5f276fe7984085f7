#include "xembody/layout.hpp"

#include <set>
#include <sstream>

namespace xembody {

int SlotLayout::group_index(const std::string& name) const {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].name == name) return static_cast<int>(g);
  }
  throw LookupError("layout has no group '" + name + "'");
}

int SlotLayout::readout_group(const std::string& head) const {
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].kind == GroupKind::Readout && groups[g].source == head) return static_cast<int>(g);
  }
  throw LookupError("layout has no readout group for head '" + head + "'");
}

TokenSlot SlotLayout::slot(int index) const {
  if (index < 0 || index >= context()) throw RangeError("token index " + std::to_string(index) + " outside context");
  TokenSlot s;
  s.step = index / step_tokens;
  const int within = index % step_tokens;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (within < groups[g].offset + groups[g].tokens) {
      s.group = static_cast<int>(g);
      s.local = within - groups[g].offset;
      break;
    }
  }
  return s;
}

bool SlotLayout::is_readout(int index) const {
  return groups[static_cast<std::size_t>(slot(index).group)].kind == GroupKind::Readout;
}

std::string SlotLayout::canonical() const {
  std::ostringstream out;
  out << "slot-layout v1 history=" << history << " step_tokens=" << step_tokens << "\n";
  for (const auto& g : groups) {
    out << "group " << g.name << " " << to_string(g.kind) << " tokens=" << g.tokens << " source=" << g.source
        << " offset=" << g.offset << "\n";
  }
  return out.str();
}

SlotLayout build_layout(const LayoutConfig& config, const std::vector<HeadSpec>& heads) {
  if (config.history < 1) throw ConfigError("layout: history must be >= 1");
  if (config.groups.empty()) throw ConfigError("layout: no groups");
  SlotLayout layout;
  layout.history = config.history;
  std::set<std::string> names;
  std::set<std::string> heads_with_readout;
  int offset = 0;
  for (const auto& g : config.groups) {
    if (!names.insert(g.name).second) throw ConfigError("layout: duplicate group '" + g.name + "'");
    if (g.tokens < 1) throw ConfigError("layout: group '" + g.name + "' must hold at least one token");
    if (g.kind == GroupKind::Readout) {
      const HeadSpec* head = nullptr;
      for (const auto& h : heads) {
        if (h.name == g.source) head = &h;
      }
      if (head == nullptr) throw ConfigError("layout: readout group '" + g.name + "' names unknown head '" + g.source + "'");
      if (head->chunk != g.tokens) {
        throw ConfigError("layout: readout group '" + g.name + "' has " + std::to_string(g.tokens) +
                          " tokens but head '" + head->name + "' predicts chunks of " + std::to_string(head->chunk));
      }
      if (!heads_with_readout.insert(g.source).second) {
        throw ConfigError("layout: head '" + g.source + "' has more than one readout group");
      }
    }
    layout.groups.push_back({g.name, g.kind, g.tokens, g.source, offset});
    offset += g.tokens;
  }
  for (const auto& h : heads) {
    if (!heads_with_readout.contains(h.name)) throw ConfigError("layout: head '" + h.name + "' has no readout group");
  }
  layout.step_tokens = offset;
  return layout;
}

SlotLayout build_layout(const PolicyConfig& config) {
  SlotLayout layout = build_layout(config.layout, config.heads);
  for (const auto& g : layout.groups) {
    if (g.kind == GroupKind::ObservationImage) {
      const int expected = config.encoders.image_tokens(g.source);
      if (expected != g.tokens) {
        throw ConfigError("layout: image group '" + g.name + "' declares " + std::to_string(g.tokens) +
                          " tokens but its encoder yields " + std::to_string(expected));
      }
    } else if (g.kind == GroupKind::ObservationProprio) {
      config.encoders.proprio_kind(g.source);
      if (g.tokens != 1) throw ConfigError("layout: proprio group '" + g.name + "' must hold exactly one token");
    }
  }
  return layout;
}

BoolMat build_attention_mask(const SlotLayout& layout, const std::vector<bool>& pad) {
  const int n = layout.context();
  if (static_cast<int>(pad.size()) != n) {
    throw DimensionError("attention mask: pad flags for " + std::to_string(pad.size()) + " tokens, context is " +
                         std::to_string(n));
  }
  std::vector<int> step(static_cast<std::size_t>(n));
  std::vector<bool> readout(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    step[static_cast<std::size_t>(i)] = layout.step_of(i);
    readout[static_cast<std::size_t>(i)] = layout.is_readout(i);
  }
  BoolMat mask = BoolMat::Constant(n, n, false);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j == i) {
        mask(i, j) = true;
        continue;
      }
      if (pad[static_cast<std::size_t>(j)]) continue;
      if (readout[static_cast<std::size_t>(j)]) continue;
      mask(i, j) = step[static_cast<std::size_t>(j)] <= step[static_cast<std::size_t>(i)];
    }
  }
  return mask;
}

BoolMat restrict_mask(const BoolMat& mask, const std::vector<int>& rows) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  BoolMat out(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) out(a, b) = mask(rows[static_cast<std::size_t>(a)], rows[static_cast<std::size_t>(b)]);
  }
  return out;
}

std::string render_layout(const SlotLayout& layout) {
  std::ostringstream out;
  out << "history k = " << layout.history << ", tokens per step S = " << layout.step_tokens
      << ", context = " << layout.context() << "\n";
  for (const auto& g : layout.groups) {
    out << "  [" << g.offset << ", " << g.offset + g.tokens << ")  " << g.name << "  (" << to_string(g.kind)
        << ", " << g.tokens << " tokens, " << g.source << ")\n";
  }
  return out.str();
}

std::string render_mask(const SlotLayout& layout, const BoolMat& mask, int max_tokens) {
  std::ostringstream out;
  const int n = std::min<int>(static_cast<int>(mask.rows()), max_tokens);
  out << "attention mask, first " << n << " tokens ('#' permitted, '.' forbidden, 'R' marks readout rows)\n";
  for (int i = 0; i < n; ++i) {
    out << (layout.is_readout(i) ? 'R' : ' ') << ' ';
    for (int j = 0; j < n; ++j) out << (mask(i, j) ? '#' : '.');
    out << "\n";
  }
  return out.str();
}

}  // namespace xembody
