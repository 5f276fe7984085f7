#pragma once

// Builds the fixed-slot token window over a k-step history: present
// observation groups are encoded, missing ones are zero-filled and flagged as
// padding, every step carries every head's readout tokens, and a learned
// positional embedding is added per absolute token index.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "xembody/encoders.hpp"
#include "xembody/layout.hpp"

namespace xembody {

/// Learned readout embeddings (one [chunk, d_model] block per head) and the
/// positional table [context, d_model].
struct TokenTables {
  std::map<std::string, int> readout;
  int position = -1;

  template <class S>
  static TokenTables create(ParameterSet<S>& params, const SlotLayout& layout, int d_model, Rng& rng) {
    TokenTables t;
    for (const auto& g : layout.groups) {
      if (g.kind != GroupKind::Readout) continue;
      t.readout[g.source] = params.add("readout/" + g.source, detail::random_matrix<S>(rng, g.tokens, d_model, 0.02), false);
    }
    t.position = params.add("position/table", detail::random_matrix<S>(rng, layout.context(), d_model, 0.02), false);
    return t;
  }

  template <class S>
  static TokenTables bind(const ParameterSet<S>& params, const SlotLayout& layout, int d_model) {
    TokenTables t;
    for (const auto& g : layout.groups) {
      if (g.kind != GroupKind::Readout) continue;
      t.readout[g.source] = params.find("readout/" + g.source);
    }
    t.position = params.find("position/table");
    const auto& pos = params[t.position].value;
    if (pos.rows() != layout.context() || pos.cols() != d_model) {
      throw DimensionError("position table has shape " + shape_str(pos.rows(), pos.cols()) + ", layout needs " +
                           shape_str(layout.context(), d_model));
    }
    return t;
  }
};

struct AssemblyOptions {
  /// Drop padded tokens and the readouts of heads not listed in `heads`.
  /// Padded tokens are never attended to and readouts are never attended to
  /// by other tokens, so the kept rows compute the same function.
  bool compact = false;
  std::vector<std::string> heads;
};

template <class S>
struct AssembledWindow {
  /// [rows.size(), d_model]; the full context when not compacted.
  Var<S> tokens;
  /// Absolute token index of every row, ascending.
  std::vector<int> rows;
  /// Absolute token index -> row, or -1 when the token was dropped.
  std::vector<int> row_of;
  /// Padding flag per absolute token index.
  std::vector<bool> pad;
  /// Steps holding a real frame.
  std::vector<bool> valid_steps;
  /// Attention mask restricted to `rows`.
  BoolMat attention;
};

/// Checks that all frames come from one embodiment and that there are at
/// most `history` of them.
inline void check_frames(std::span<const ObservationFrame> frames, int history) {
  if (frames.empty()) throw ContractError("assemble_window: no frames");
  if (static_cast<int>(frames.size()) > history) {
    throw ContractError("assemble_window: " + std::to_string(frames.size()) + " frames exceed history " +
                        std::to_string(history));
  }
  for (const auto& f : frames) {
    if (f.embodiment != frames.front().embodiment) {
      throw ContractError("assemble_window: mixed embodiments '" + frames.front().embodiment + "' and '" +
                          f.embodiment + "' in one window");
    }
  }
}

/// Frames are ordered oldest to newest; with fewer than k frames the leading
/// steps are fully padded.
template <class S>
AssembledWindow<S> assemble_window(ParameterLeaves<S>& leaves, const SlotLayout& layout, const EncoderBank& bank,
                                   const TokenTables& tables, std::span<const ObservationFrame> frames,
                                   const TaskSpec& task, const AssemblyOptions& options = {}) {
  check_frames(frames, layout.history);
  const int k = layout.history;
  const int first_valid = k - static_cast<int>(frames.size());
  const int d = bank.d_model;
  Tape<S>& tape = leaves.tape();

  AssembledWindow<S> w;
  w.pad.assign(static_cast<std::size_t>(layout.context()), false);
  w.valid_steps.assign(static_cast<std::size_t>(k), false);
  w.row_of.assign(static_cast<std::size_t>(layout.context()), -1);

  std::set<std::string> kept_heads(options.heads.begin(), options.heads.end());
  std::optional<Var<S>> lang;
  if (task.instruction != 0) lang = embed_language(leaves, bank, task.instruction);
  const Image* goal = task.goal ? &*task.goal : nullptr;

  std::vector<Var<S>> pieces;
  std::vector<int> position_rows;
  Mat<S> position_keep;
  std::vector<S> keep_flags;

  auto push_piece = [&](const Var<S>& piece, int begin, bool padded) {
    pieces.push_back(piece);
    for (int i = 0; i < piece.rows(); ++i) {
      w.row_of[static_cast<std::size_t>(begin + i)] = static_cast<int>(w.rows.size());
      w.rows.push_back(begin + i);
      position_rows.push_back(begin + i);
      keep_flags.push_back(padded ? S(0) : S(1));
    }
  };

  for (int step = 0; step < k; ++step) {
    const bool step_valid = step >= first_valid;
    w.valid_steps[static_cast<std::size_t>(step)] = step_valid;
    const ObservationFrame* frame = step_valid ? &frames[static_cast<std::size_t>(step - first_valid)] : nullptr;
    for (std::size_t g = 0; g < layout.groups.size(); ++g) {
      const SlotGroup& group = layout.groups[g];
      const int begin = layout.offset(step, static_cast<int>(g));
      std::optional<Var<S>> content;
      if (frame != nullptr) {
        switch (group.kind) {
          case GroupKind::ObservationImage: {
            auto it = frame->images.find(group.source);
            if (it != frame->images.end()) {
              const Image* stacked_goal = (goal != nullptr && goal->view == group.source) ? goal : nullptr;
              content = encode_image(leaves, bank, it->second, stacked_goal, lang);
            }
            break;
          }
          case GroupKind::ObservationProprio: {
            auto it = frame->proprio.find(group.source);
            if (it != frame->proprio.end()) content = encode_proprio(leaves, bank, group.source, it->second);
            break;
          }
          case GroupKind::Readout:
            if (!options.compact || kept_heads.empty() || kept_heads.contains(group.source)) {
              content = leaves(tables.readout.at(group.source));
            } else {
              continue;  // dropped readout group; not padding
            }
            break;
        }
      }
      if (content) {
        if (content->rows() != group.tokens) {
          throw DimensionError("group '" + group.name + "' produced " + std::to_string(content->rows()) +
                               " tokens, layout reserves " + std::to_string(group.tokens));
        }
        push_piece(*content, begin, false);
      } else {
        for (int i = 0; i < group.tokens; ++i) w.pad[static_cast<std::size_t>(begin + i)] = true;
        if (!options.compact) push_piece(tape.constant(Mat<S>::Zero(group.tokens, d)), begin, true);
      }
    }
  }

  Var<S> tokens = concat_rows(pieces);
  position_keep = Mat<S>(static_cast<Eigen::Index>(keep_flags.size()), d);
  for (std::size_t r = 0; r < keep_flags.size(); ++r) position_keep.row(static_cast<Eigen::Index>(r)).setConstant(keep_flags[r]);
  const Var<S> positions = mul(gather_rows(leaves(tables.position), position_rows), tape.constant(std::move(position_keep)));
  w.tokens = add(tokens, positions);
  w.attention = restrict_mask(build_attention_mask(layout, w.pad), w.rows);
  return w;
}

/// The head's readout rows at every valid step, oldest first.
template <class S>
std::vector<Var<S>> readout_embeddings(const Var<S>& embeddings, const AssembledWindow<S>& window,
                                       const SlotLayout& layout, const std::string& head) {
  const int group = layout.readout_group(head);
  const int chunk = layout.groups[static_cast<std::size_t>(group)].tokens;
  std::vector<Var<S>> out;
  for (int step = 0; step < layout.history; ++step) {
    if (!window.valid_steps[static_cast<std::size_t>(step)]) continue;
    const int row = window.row_of[static_cast<std::size_t>(layout.offset(step, group))];
    if (row < 0) throw LookupError("readouts of head '" + head + "' were not assembled");
    out.push_back(slice_rows(embeddings, row, chunk));
  }
  return out;
}

}  // namespace xembody
