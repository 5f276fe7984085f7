#include "xembody/shard.hpp"

#include <numeric>

#include "xembody/bytes.hpp"

namespace xembody {

namespace {

constexpr char kMagic[] = "XEDS1";
constexpr std::size_t kMagicSize = 5;

StreamKind stream_kind_from_string(const std::string& s) {
  if (s == "image") return StreamKind::Image;
  if (s == "proprio") return StreamKind::Proprio;
  if (s == "action") return StreamKind::Action;
  throw FormatError("unknown stream kind '" + s + "'");
}

}  // namespace

std::string to_string(StreamKind kind) {
  switch (kind) {
    case StreamKind::Image:
      return "image";
    case StreamKind::Proprio:
      return "proprio";
    case StreamKind::Action:
      return "action";
  }
  return "?";
}

int StreamSpec::width() const { return std::accumulate(shape.begin(), shape.end(), 1, std::multiplies<int>()); }

const StreamSpec& ShardHeader::stream(const std::string& name) const {
  return streams[static_cast<std::size_t>(stream_index(name))];
}

int ShardHeader::stream_index(const std::string& name) const {
  for (std::size_t i = 0; i < streams.size(); ++i) {
    if (streams[i].name == name) return static_cast<int>(i);
  }
  throw LookupError("shard '" + dataset + "' has no stream '" + name + "'");
}

Json ShardHeader::to_json() const {
  Json s = Json::array();
  for (const auto& st : streams) {
    s.push_back({{"name", st.name}, {"kind", xembody::to_string(st.kind)}, {"shape", st.shape}, {"dtype", "f32"}});
  }
  return {{"format", "XEDS1"},   {"dataset", dataset}, {"embodiment", embodiment}, {"head", head},
          {"action_dim", action_dim}, {"vocab", vocab},     {"goal_view", goal_view},   {"streams", s}};
}

ShardHeader ShardHeader::from_json(const Json& j) {
  try {
    ShardHeader h;
    h.dataset = j.at("dataset").get<std::string>();
    h.embodiment = j.at("embodiment").get<std::string>();
    h.head = j.at("head").get<std::string>();
    h.action_dim = j.at("action_dim").get<int>();
    h.vocab = j.at("vocab").get<int>();
    h.goal_view = j.value("goal_view", std::string());
    for (const auto& s : j.at("streams")) {
      if (s.value("dtype", std::string("f32")) != "f32") throw FormatError("stream dtype must be f32");
      StreamSpec st{s.at("name").get<std::string>(), stream_kind_from_string(s.at("kind").get<std::string>()),
                    s.at("shape").get<std::vector<int>>()};
      for (int d : st.shape) {
        if (d < 1) throw FormatError("stream '" + st.name + "' has a non-positive extent");
      }
      h.streams.push_back(std::move(st));
    }
    const int action = h.stream_index("action");
    if (h.streams[static_cast<std::size_t>(action)].width() != h.action_dim) {
      throw FormatError("action stream width differs from declared action_dim " + std::to_string(h.action_dim));
    }
    return h;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed shard header: ") + e.what());
  } catch (const LookupError& e) {
    throw FormatError(std::string("malformed shard header: ") + e.what());
  }
}

const MatF& DatasetShard::actions(std::size_t i) const {
  return trajectories.at(i).streams[static_cast<std::size_t>(header.stream_index("action"))];
}

Image DatasetShard::image(std::size_t i, int t, const std::string& view) const {
  const int s = header.stream_index(view);
  const StreamSpec& spec = header.streams[static_cast<std::size_t>(s)];
  if (spec.kind != StreamKind::Image || spec.shape.size() != 3) throw LookupError("stream '" + view + "' is not an image");
  const MatF& rows = trajectories.at(i).streams[static_cast<std::size_t>(s)];
  Image img{view, {spec.shape[0], spec.shape[1], spec.shape[2]}, MatF(spec.shape[0], spec.shape[1] * spec.shape[2])};
  std::copy_n(rows.row(t).data(), spec.width(), img.pixels.data());
  return img;
}

ObservationFrame DatasetShard::frame(std::size_t i, int t) const {
  const TrajectoryRecord& traj = trajectories.at(i);
  if (t < 0 || t >= traj.steps()) throw RangeError("step " + std::to_string(t) + " outside trajectory of " + std::to_string(traj.steps()));
  ObservationFrame f;
  f.embodiment = header.embodiment;
  for (std::size_t s = 0; s < header.streams.size(); ++s) {
    const StreamSpec& spec = header.streams[s];
    if (spec.kind == StreamKind::Image) {
      f.images.emplace(spec.name, image(i, t, spec.name));
    } else if (spec.kind == StreamKind::Proprio) {
      f.proprio.emplace(spec.name, Eigen::VectorXf(traj.streams[s].row(t).transpose()));
    }
  }
  return f;
}

void check_schema(const ShardHeader& header, const TrajectoryRecord& traj) {
  if (traj.embodiment != header.embodiment) {
    throw FormatError("trajectory embodiment '" + traj.embodiment + "' in shard of '" + header.embodiment + "'");
  }
  if (traj.streams.size() != header.streams.size()) {
    throw FormatError("trajectory has " + std::to_string(traj.streams.size()) + " streams, header declares " +
                      std::to_string(header.streams.size()));
  }
  const Eigen::Index steps = traj.streams.empty() ? 0 : traj.streams.front().rows();
  for (std::size_t s = 0; s < header.streams.size(); ++s) {
    const StreamSpec& spec = header.streams[s];
    if (traj.streams[s].rows() != steps) throw FormatError("stream '" + spec.name + "' length differs from the others");
    if (traj.streams[s].cols() != spec.width()) {
      throw FormatError("stream '" + spec.name + "' has width " + std::to_string(traj.streams[s].cols()) +
                        ", header declares " + std::to_string(spec.width()));
    }
  }
  if (traj.instruction < 0 || traj.instruction >= std::max(header.vocab, 1)) {
    throw FormatError("instruction id " + std::to_string(traj.instruction) + " outside vocabulary");
  }
}

std::vector<std::uint8_t> encode_shard(const DatasetShard& shard) {
  for (const auto& t : shard.trajectories) check_schema(shard.header, t);
  std::vector<std::uint8_t> out;
  bytes::put_string(out, std::string(kMagic, kMagicSize));
  const std::string header = shard.header.to_json().dump();
  bytes::put_u32(out, static_cast<std::uint32_t>(header.size()));
  bytes::put_string(out, header);
  for (const auto& t : shard.trajectories) {
    bytes::put_u32(out, static_cast<std::uint32_t>(t.steps()));
    bytes::put_u32(out, static_cast<std::uint32_t>(t.instruction));
    for (const auto& s : t.streams) bytes::put_f32_block(out, s.data(), static_cast<std::size_t>(s.size()));
  }
  return out;
}

DatasetShard decode_shard(const std::vector<std::uint8_t>& data) {
  bytes::Reader in(data);
  in.need(kMagicSize, "magic");
  const std::string magic = in.str(kMagicSize, "magic");
  if (magic != std::string(kMagic, kMagicSize)) throw FormatError("not an XEDS1 shard (magic '" + magic + "')");
  const std::uint32_t header_len = in.u32("header length");
  const std::string header_text = in.str(header_len, "header");
  Json header_json;
  try {
    header_json = Json::parse(header_text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("shard header is not JSON: ") + e.what());
  }
  if (header_json.value("format", std::string()) != "XEDS1") throw FormatError("shard header declares another format");

  DatasetShard shard;
  shard.header = ShardHeader::from_json(header_json);
  while (in.remaining() > 0) {
    TrajectoryRecord t;
    t.embodiment = shard.header.embodiment;
    const std::uint32_t steps = in.u32("trajectory step count");
    t.instruction = static_cast<int>(in.u32("instruction id"));
    for (const auto& spec : shard.header.streams) {
      const std::size_t n = static_cast<std::size_t>(steps) * static_cast<std::size_t>(spec.width());
      in.need(n * 4, "stream '" + spec.name + "'");
      MatF m(static_cast<Eigen::Index>(steps), spec.width());
      in.f32_block(m.data(), n, "stream '" + spec.name + "'");
      t.streams.push_back(std::move(m));
    }
    try {
      check_schema(shard.header, t);
    } catch (const FormatError& e) {
      throw CorruptionError(e.what(), in.offset());
    }
    shard.trajectories.push_back(std::move(t));
  }
  return shard;
}

void write_shard(const DatasetShard& shard, const std::string& path) { bytes::write_file(encode_shard(shard), path); }

DatasetShard read_shard(const std::string& path) { return decode_shard(bytes::read_file(path)); }

}  // namespace xembody
