#pragma once

// XEDS1 trajectory shards. Layout on disk:
//   "XEDS1" | u32 LE header length | UTF-8 JSON header |
//   per trajectory: u32 T, u32 instruction id, then every declared stream as
//   T rows of little-endian f32, row-major, in header order.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xembody/autodiff.hpp"
#include "xembody/config.hpp"
#include "xembody/observation.hpp"

namespace xembody {

enum class StreamKind { Image, Proprio, Action };

std::string to_string(StreamKind kind);

/// One per-step array. Images are [3, H, W] flattened channel-major; proprio
/// and action streams are vectors.
struct StreamSpec {
  std::string name;
  StreamKind kind = StreamKind::Proprio;
  std::vector<int> shape;

  int width() const;
};

struct ShardHeader {
  std::string dataset;
  std::string embodiment;
  std::string head;
  int action_dim = 0;
  int vocab = 0;
  /// View whose future frames serve as relabeled goals; empty when the
  /// embodiment is never goal-conditioned.
  std::string goal_view;
  std::vector<StreamSpec> streams;

  const StreamSpec& stream(const std::string& name) const;
  int stream_index(const std::string& name) const;
  Json to_json() const;
  static ShardHeader from_json(const Json& j);
};

/// One episode. `streams[i]` is [T, header.streams[i].width()].
struct TrajectoryRecord {
  std::string embodiment;
  int instruction = 0;
  std::vector<MatF> streams;

  int steps() const { return streams.empty() ? 0 : static_cast<int>(streams.front().rows()); }
};

struct DatasetShard {
  ShardHeader header;
  std::vector<TrajectoryRecord> trajectories;

  /// The action stream [T, action_dim] of trajectory `i`.
  const MatF& actions(std::size_t i) const;
  /// Everything the embodiment observes at step `t` of trajectory `i`.
  ObservationFrame frame(std::size_t i, int t) const;
  /// The `view` image at step `t` of trajectory `i`.
  Image image(std::size_t i, int t, const std::string& view) const;
};

/// Throws FormatError when a trajectory disagrees with the header schema.
void check_schema(const ShardHeader& header, const TrajectoryRecord& traj);

std::vector<std::uint8_t> encode_shard(const DatasetShard& shard);
DatasetShard decode_shard(const std::vector<std::uint8_t>& bytes);

void write_shard(const DatasetShard& shard, const std::string& path);
DatasetShard read_shard(const std::string& path);

}  // namespace xembody
