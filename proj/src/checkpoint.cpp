#include "xembody/checkpoint.hpp"

#include "xembody/bytes.hpp"
#include "xembody/layout.hpp"

namespace xembody {

namespace {

constexpr char kMagic[] = "XCKPT1";
constexpr std::size_t kMagicSize = 6;

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Json blocks = Json::array();
  std::vector<const MatF*> data;
  auto add_block = [&](const std::string& name, const MatF& m, bool decay) {
    blocks.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"decay", decay}});
    data.push_back(&m);
  };
  for (const auto& p : ckpt.parameters) add_block(p.name, p.value, p.decay);
  if (ckpt.optimizer) {
    const auto& opt = *ckpt.optimizer;
    std::size_t i = 0;
    for (const auto& p : ckpt.parameters) {
      add_block("adam/m/" + p.name, opt.m[i], false);
      add_block("adam/v/" + p.name, opt.v[i], false);
      ++i;
    }
  }
  Json header = {{"format", "XCKPT1"},
                 {"config", to_json(ckpt.config)},
                 {"layout", build_layout(ckpt.config.policy).canonical()},
                 {"step", ckpt.step},
                 {"optimizer_step", ckpt.optimizer ? ckpt.optimizer->step : 0},
                 {"has_optimizer", ckpt.optimizer.has_value()},
                 {"metrics", ckpt.metrics},
                 {"blocks", blocks}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  bytes::put_string(out, std::string(kMagic, kMagicSize));
  bytes::put_u32(out, static_cast<std::uint32_t>(text.size()));
  bytes::put_string(out, text);
  for (const MatF* m : data) bytes::put_f32_block(out, m->data(), static_cast<std::size_t>(m->size()));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& data) {
  bytes::Reader in(data);
  in.need(kMagicSize, "magic");
  const std::string magic = in.str(kMagicSize, "magic");
  if (magic != std::string(kMagic, kMagicSize)) throw FormatError("not an XCKPT1 checkpoint (magic '" + magic + "')");
  const std::uint32_t len = in.u32("header length");
  Json header;
  try {
    header = Json::parse(in.str(len, "header"));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint header is not JSON: ") + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.config = config_from_json(header.at("config"));
    ckpt.step = header.at("step").get<long>();
    ckpt.metrics = header.at("metrics");
    const std::string layout = build_layout(ckpt.config.policy).canonical();
    if (header.at("layout").get<std::string>() != layout) throw FormatError("checkpoint layout does not match its config");
    const bool has_opt = header.at("has_optimizer").get<bool>();
    OptimizerState<float> opt;
    opt.step = header.at("optimizer_step").get<long>();
    for (const auto& b : header.at("blocks")) {
      const std::string name = b.at("name").get<std::string>();
      const Eigen::Index rows = b.at("rows").get<Eigen::Index>(), cols = b.at("cols").get<Eigen::Index>();
      if (rows < 0 || cols < 0) throw FormatError("negative block extent for '" + name + "'");
      MatF m(rows, cols);
      in.f32_block(m.data(), static_cast<std::size_t>(rows * cols), "block '" + name + "'");
      if (name.rfind("adam/m/", 0) == 0) {
        opt.m.push_back(std::move(m));
      } else if (name.rfind("adam/v/", 0) == 0) {
        opt.v.push_back(std::move(m));
      } else {
        ckpt.parameters.add(name, std::move(m), b.at("decay").get<bool>());
      }
    }
    if (has_opt) {
      if (opt.m.size() != ckpt.parameters.size() || opt.v.size() != ckpt.parameters.size()) {
        throw FormatError("optimizer moments do not cover every parameter block");
      }
      ckpt.optimizer = std::move(opt);
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("malformed checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (in.remaining() != 0) throw CorruptionError("trailing bytes after last block", in.offset());
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) { bytes::write_file(encode_checkpoint(ckpt), path); }

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(bytes::read_file(path)); }

void check_compatible(const Checkpoint& ckpt, const PolicyConfig& config) {
  auto one_line = [](std::string s) {
    while (!s.empty() && s.back() == '\n') s.pop_back();
    for (auto& c : s) c = c == '\n' ? ';' : c;
    return s;
  };
  const std::string theirs = one_line(build_layout(ckpt.config.policy).canonical());
  const std::string ours = one_line(build_layout(config).canonical());
  if (theirs != ours) {
    throw CompatibilityError("checkpoint layout [" + theirs + "] does not match configured layout [" + ours + "]");
  }
}

}  // namespace xembody
