#pragma once

// XCKPT1 checkpoints: "XCKPT1" | u32 LE header length | JSON header (config,
// layout, step, metrics, block table) | named f32 LE blocks in header order.
// Optimizer moments, when present, follow as "adam/m/<name>" and
// "adam/v/<name>" blocks.

#include <optional>
#include <string>
#include <vector>

#include "xembody/config.hpp"
#include "xembody/optimizer.hpp"
#include "xembody/parameters.hpp"

namespace xembody {

struct Checkpoint {
  Config config;
  ParameterSet<float> parameters;
  std::optional<OptimizerState<float>> optimizer;
  long step = 0;
  /// Free-form metric table; validation MSE lives under "validation_mse".
  Json metrics = Json::object();
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// Throws FileError when the file is missing.
Checkpoint load_checkpoint(const std::string& path);

/// Throws CompatibilityError naming both layouts when the checkpoint was
/// trained with a different slot layout than `config` produces.
void check_compatible(const Checkpoint& ckpt, const PolicyConfig& config);

}  // namespace xembody
