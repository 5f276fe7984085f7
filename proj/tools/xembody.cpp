// xembody: data generation, training, evaluation, invariant verification and
// layout inspection for the cross-embodiment policy.
//
//   xembody gen-data --config desk.json --out run/data
//   xembody train    --config desk.json --data run/data --out run/cross
//   xembody eval     --config desk.json --checkpoint run/cross/best.xckpt
//       --specialist arm1=run/arm1/best.xckpt --out run/eval
//   xembody verify   grads
//   xembody inspect  --config desk.json
//
// Exit code 0 on success, 1 on a failed suite or run, 2 on usage errors.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "xembody/checkpoint.hpp"
#include "xembody/envs.hpp"
#include "xembody/evaluation.hpp"
#include "xembody/layout.hpp"
#include "xembody/trainer.hpp"
#include "xembody/verify.hpp"

namespace fs = std::filesystem;
using namespace xembody;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

Config resolve_config(const Globals& g) {
  Config c = g.config_path.empty() ? desk_config() : load_config(g.config_path);
  if (g.seed) {
    c.train.seed = *g.seed;
    c.eval.seed = *g.seed;
  }
  return c;
}

int gen_data(const Globals& g) {
  const Config c = resolve_config(g);
  fs::create_directories(g.out);
  int written = 0;
  for (std::size_t i = 0; i < c.mixture.entries.size(); ++i) {
    const auto& e = c.mixture.entries[i];
    if (e.embodiment.empty() || e.trajectories <= 0) {
      std::cout << "skip " << e.dataset << " (no generator)\n";
      continue;
    }
    const DatasetShard shard =
        generate_dataset(e.embodiment, e.trajectories, derive_seed(c.train.seed, 0xDA7A + i), c.policy.encoders.vocab,
                         e.dataset);
    const std::string path = (fs::path(g.out) / (e.dataset + ".xeds")).string();
    write_shard(shard, path);
    std::cout << Json({{"dataset", e.dataset}, {"embodiment", e.embodiment}, {"trajectories", e.trajectories},
                       {"path", path}})
                     .dump()
              << "\n";
    ++written;
  }
  save_config(c, (fs::path(g.out) / "config.json").string());
  return written > 0 ? 0 : 1;
}

int run_train(const Globals& g, const std::string& data_dir) {
  const Config c = resolve_config(g);
  const auto sources = load_sources(c.mixture, data_dir);
  TrainOptions opts;
  opts.out_dir = g.out;
  opts.log = &std::cout;
  fs::create_directories(g.out);
  save_config(c, (fs::path(g.out) / "config.json").string());
  try {
    const TrainResult r = train(c, sources, opts);
    std::cout << Json({{"event", "done"}, {"steps", r.final_checkpoint.step}, {"final_train_l1", r.final_train_l1},
                       {"best_step", r.best_checkpoint.step}})
                     .dump()
              << "\n";
  } catch (const TrainingAbort& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int run_eval(const Globals& g, const std::string& checkpoint, const std::vector<std::string>& specialist_args) {
  const Config c = resolve_config(g);
  std::vector<std::pair<std::string, std::string>> specialists;
  for (const auto& s : specialist_args) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--specialist expects NAME=PATH, got '" + s + "'");
    specialists.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  const EvalReport report = evaluate(checkpoint, c, specialists);
  fs::create_directories(g.out);
  const std::string path = (fs::path(g.out) / "eval_report.json").string();
  std::ofstream(path) << report.to_json().dump(2) << "\n";
  for (const auto& p : report.policies) {
    for (const auto& s : p.suites) {
      std::cout << p.name << "  " << s.embodiment << "  " << s.successes << "/" << s.trials << "  success "
                << s.success_rate;
      if (s.embodiment == "quad") std::cout << "  normalized reward " << s.normalized_reward;
      std::cout << "\n";
    }
  }
  std::cout << "report: " << path << "\n";
  return 0;
}

int run_verify(const Globals& g, const std::string& kind) {
  const Config c = resolve_config(g);
  const std::uint64_t seed = g.seed.value_or(0);
  std::vector<VerifyResult> results;
  if (kind == "masks") {
    results.push_back(verify_masks(seed));
  } else if (kind == "grads") {
    results.push_back(verify_grads(c, seed));
  } else if (kind == "mixture") {
    results.push_back(verify_mixture(c.mixture, "config mixture", seed));
    results.push_back(verify_mixture(paper_mixture(), "paper mixture", seed));
  } else if (kind == "relabel") {
    results.push_back(verify_relabel(seed));
  } else if (kind == "format") {
    results.push_back(verify_format(c, seed));
  }
  bool ok = true;
  for (const auto& r : results) {
    for (const auto& line : r.lines) std::cout << "  " << line << "\n";
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.seconds << " s)\n";
    if (!r.passed) std::cout << "  counterexample: " << r.counterexample << "\n";
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int run_inspect(const Globals& g, const std::string& checkpoint) {
  Config c = resolve_config(g);
  if (!checkpoint.empty()) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    c = ck.config;
    std::cout << "checkpoint " << checkpoint << ": step " << ck.step << ", " << ck.parameters.size() << " blocks, "
              << ck.parameters.scalar_count() << " scalars, metrics " << ck.metrics.dump() << "\n";
  }
  const SlotLayout layout = build_layout(c.policy);
  std::cout << render_layout(layout);
  std::vector<bool> pad(static_cast<std::size_t>(layout.context()), false);
  std::cout << render_mask(layout, build_attention_mask(layout, pad));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-embodiment transformer policy: data, training, evaluation and verification"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON config (defaults to the built-in desk config)");
  app.add_option("--seed", g.seed, "Overrides the train and eval seeds");
  app.add_option("--out", g.out, "Output directory");

  auto* gen = app.add_subcommand("gen-data", "Generate expert datasets for every mixture entry");
  std::string data_dir = "data";
  auto* tr = app.add_subcommand("train", "Train a policy on the mixture");
  tr->add_option("--data", data_dir, "Directory holding <dataset>.xeds shards");
  std::string checkpoint;
  std::vector<std::string> specialists;
  auto* ev = app.add_subcommand("eval", "Closed-loop evaluation report");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--specialist", specialists, "Additional NAME=PATH checkpoints for side-by-side parity");
  std::string kind;
  auto* ver = app.add_subcommand("verify", "Run an invariant suite");
  ver->add_option("kind", kind, "Suite to run")
      ->required()
      ->check(CLI::IsMember({"masks", "grads", "mixture", "relabel", "format"}));
  auto* ins = app.add_subcommand("inspect", "Print the slot layout and attention mask");
  ins->add_option("--checkpoint", checkpoint, "Describe this checkpoint's layout instead");
  for (auto* sub : {gen, tr, ev, ver, ins}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;  // --help exits 0
  }
  try {
    if (*gen) return gen_data(g);
    if (*tr) return run_train(g, data_dir);
    if (*ev) return run_eval(g, checkpoint, specialists);
    if (*ver) return run_verify(g, kind);
    if (*ins) return run_inspect(g, checkpoint);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
