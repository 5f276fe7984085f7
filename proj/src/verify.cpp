#include "xembody/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "xembody/backbone.hpp"
#include "xembody/checkpoint.hpp"
#include "xembody/envs.hpp"
#include "xembody/finite_diff.hpp"
#include "xembody/layout.hpp"
#include "xembody/policy.hpp"
#include "xembody/sampling.hpp"

namespace xembody {

namespace {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

// ---------------------------------------------------------------- masks

struct RandomWindow {
  SlotLayout layout;
  std::vector<bool> pad;
  MatD tokens;
};

RandomWindow random_window(Rng& rng) {
  LayoutConfig cfg;
  cfg.history = rng.uniform_int(1, 5);
  std::vector<HeadSpec> heads;
  const int n_heads = rng.uniform_int(1, 3);
  for (int h = 0; h < n_heads; ++h) heads.push_back({"head" + std::to_string(h), 2, rng.uniform_int(1, 4), 0});
  std::vector<GroupConfig> groups;
  const int n_obs = rng.uniform_int(1, 4);
  for (int g = 0; g < n_obs; ++g) {
    const bool image = rng.bernoulli(0.6);
    groups.push_back({"obs" + std::to_string(g), image ? GroupKind::ObservationImage : GroupKind::ObservationProprio,
                      image ? rng.uniform_int(1, 4) : 1, "src" + std::to_string(g)});
  }
  for (const auto& h : heads) groups.push_back({"readout_" + h.name, GroupKind::Readout, h.chunk, h.name});
  // Readouts are not required to trail the observations; shuffle the order.
  for (std::size_t i = groups.size(); i > 1; --i) std::swap(groups[i - 1], groups[rng.below(i)]);
  cfg.groups = groups;

  RandomWindow w;
  w.layout = build_layout(cfg, heads);
  const int n = w.layout.context();
  w.pad.assign(static_cast<std::size_t>(n), false);
  const int leading = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.history)));
  for (int step = 0; step < cfg.history; ++step) {
    for (std::size_t g = 0; g < w.layout.groups.size(); ++g) {
      const auto& group = w.layout.groups[g];
      const bool padded = group.kind != GroupKind::Readout && (step < leading || rng.bernoulli(0.3));
      if (!padded) continue;
      const int begin = w.layout.offset(step, static_cast<int>(g));
      for (int i = 0; i < group.tokens; ++i) w.pad[static_cast<std::size_t>(begin + i)] = true;
    }
  }
  w.tokens = detail::random_matrix<double>(rng, n, 8, 1.0);
  for (int i = 0; i < n; ++i) {
    if (w.pad[static_cast<std::size_t>(i)]) w.tokens.row(i).setZero();
  }
  return w;
}

MatD run_backbone(const ParameterSet<double>& params, const BackboneParams& bp, const MatD& tokens, const BoolMat& mask) {
  Tape<double> tape(false);
  ParameterLeaves<double> leaves(tape, params);
  return backbone_forward(leaves, bp, tape.constant(tokens), mask).value();
}

// Rows where `a` and `b` differ in any bit, restricted to `rows`.
std::vector<int> differing_rows(const MatD& a, const MatD& b, const std::vector<int>& rows) {
  std::vector<int> out;
  for (int r : rows) {
    if (!(a.row(r).array() == b.row(r).array()).all()) out.push_back(r);
  }
  return out;
}

}  // namespace

VerifyResult verify_masks(std::uint64_t seed, int layouts, const MaskBuilder& build_mask) {
  Stopwatch clock;
  VerifyResult res;
  res.name = "masks";
  Rng rng(seed);
  ParameterSet<double> params;
  const BackboneConfig cfg{2, 2, 8, 16};
  const BackboneParams bp = BackboneParams::create(params, cfg, rng);
  int checks = 0;

  auto fail = [&](const std::string& what, int layout_index, const RandomWindow& w, int row) {
    if (!res.passed) return;
    res.passed = false;
    const TokenSlot s = w.layout.slot(row);
    res.counterexample = what + " violated on layout " + std::to_string(layout_index) + " (" +
                         std::to_string(w.layout.history) + " steps, S = " + std::to_string(w.layout.step_tokens) +
                         "): output token " + std::to_string(row) + " (step " + std::to_string(s.step) + ", group '" +
                         w.layout.groups[static_cast<std::size_t>(s.group)].name + "') changed";
  };

  for (int li = 0; li < layouts; ++li) {
    const RandomWindow w = random_window(rng);
    const int n = w.layout.context();
    const BoolMat mask = build_mask(w.layout, w.pad);
    const MatD base = run_backbone(params, bp, w.tokens, mask);

    // Causality: perturb every token at steps >= t'; outputs before t' fixed.
    for (int cut = 1; cut < w.layout.history; ++cut) {
      MatD tokens = w.tokens;
      const int from = cut * w.layout.step_tokens;
      tokens.bottomRows(n - from) += detail::random_matrix<double>(rng, n - from, tokens.cols(), 1.0);
      std::vector<int> before(static_cast<std::size_t>(from));
      for (int i = 0; i < from; ++i) before[static_cast<std::size_t>(i)] = i;
      const auto diff = differing_rows(base, run_backbone(params, bp, tokens, mask), before);
      ++checks;
      if (!diff.empty()) fail("causality", li, w, diff.front());
    }

    // Readout passivity: perturb one readout group at one step; every other
    // token's output is fixed.
    for (std::size_t g = 0; g < w.layout.groups.size(); ++g) {
      const auto& group = w.layout.groups[g];
      if (group.kind != GroupKind::Readout) continue;
      const int step = static_cast<int>(rng.below(static_cast<std::uint64_t>(w.layout.history)));
      const int begin = w.layout.offset(step, static_cast<int>(g));
      MatD tokens = w.tokens;
      tokens.middleRows(begin, group.tokens) += detail::random_matrix<double>(rng, group.tokens, tokens.cols(), 1.0);
      std::vector<int> others;
      for (int i = 0; i < n; ++i) {
        if (i < begin || i >= begin + group.tokens) others.push_back(i);
      }
      const auto diff = differing_rows(base, run_backbone(params, bp, tokens, mask), others);
      ++checks;
      if (!diff.empty()) fail("readout passivity", li, w, diff.front());
    }

    // Pad invariance: arbitrary content in padded slots.
    MatD tokens = w.tokens;
    std::vector<int> kept;
    for (int i = 0; i < n; ++i) {
      if (w.pad[static_cast<std::size_t>(i)]) {
        tokens.row(i) = detail::random_matrix<double>(rng, 1, tokens.cols(), 10.0);
      } else {
        kept.push_back(i);
      }
    }
    const auto diff = differing_rows(base, run_backbone(params, bp, tokens, mask), kept);
    ++checks;
    if (!diff.empty()) fail("pad invariance", li, w, diff.front());
  }
  res.lines.push_back(std::to_string(layouts) + " random layouts, " + std::to_string(checks) +
                      " perturbations, bit-exact comparison");
  res.metrics = {{"layouts", layouts}, {"perturbations", checks}};
  res.seconds = clock.seconds();
  return res;
}

// ---------------------------------------------------------------- grads

VerifyResult verify_grads(const Config& config, std::uint64_t seed, int probes, double threshold, double eps) {
  Stopwatch clock;
  VerifyResult res;
  res.name = "grads";
  Policy<double> policy(config.policy, derive_seed(seed, 1));

  // One example per embodiment that has a head in this config.
  std::vector<TrainingExample> batch;
  Rng rng(derive_seed(seed, 2));
  for (const std::string emb : {"arm1", "nav", "bimanual", "quad"}) {
    const auto& spec = embodiment_spec(emb);
    const DataSource source(generate_dataset(emb, 1, derive_seed(seed, 3), config.policy.encoders.vocab));
    ExampleOptions opts;
    opts.history = config.policy.layout.history;
    opts.chunk = config.policy.head(spec.head).chunk;
    opts.augment = true;
    opts.augmentation = config.train.augment;
    const int steps = source.shard.trajectories[0].steps();
    // A late window end so the chunk target is partially masked.
    batch.push_back(make_example(source, 0, std::max(0, steps - 2), opts, rng));
  }

  auto forward = [&](Tape<double>& tape) {
    ParameterLeaves<double> leaves(tape, policy.parameters());
    std::vector<ElementPrediction<double>> preds;
    std::vector<std::vector<StepTarget>> targets;
    for (const auto& ex : batch) {
      preds.push_back(policy.run_owned(leaves, ex.frames, ex.task, ex.head).prediction);
      targets.push_back(ex.targets);
    }
    return std::make_pair(training_loss<double>(preds, targets), preds);
  };
  auto signature = [&](const std::vector<ElementPrediction<double>>& preds) {
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t b = 0; b < preds.size(); ++b) {
      std::vector<MatD> chunks;
      for (const auto& c : preds[b].chunks.at(preds[b].owner)) chunks.push_back(c.value());
      h = residual_sign_signature(chunks, batch[b].targets, h);
    }
    return h;
  };

  Tape<double> tape;
  auto [loss, preds] = forward(tape);
  auto grad_map = tape.backward(loss);
  std::vector<MatD*> blocks;
  std::vector<MatD> analytic;
  for (std::size_t i = 0; i < policy.parameters().size(); ++i) {
    blocks.push_back(&policy.parameters()[static_cast<int>(i)].value);
    auto it = grad_map.find(static_cast<int>(i));
    analytic.push_back(it != grad_map.end() ? it->second
                                            : MatD::Zero(blocks.back()->rows(), blocks.back()->cols()));
  }

  // A block is drawn uniformly among blocks with a nonzero gradient, then an
  // entry uniformly among that block's entries whose gradient clears the
  // finite-difference noise floor (relative error is meaningless below it).
  const double floor = 1e-6;
  std::vector<std::pair<int, std::vector<Eigen::Index>>> candidates;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < analytic[i].size(); ++j) {
      if (std::abs(analytic[i].data()[j]) > floor) idx.push_back(j);
    }
    if (!idx.empty()) candidates.emplace_back(static_cast<int>(i), std::move(idx));
  }
  if (candidates.empty()) throw EvaluationError("verify grads: every gradient is zero");
  std::vector<FiniteDiffProbe> chosen;
  for (int p = 0; p < probes; ++p) {
    const auto& [block, idx] = candidates[rng.below(candidates.size())];
    chosen.push_back({block, idx[rng.below(idx.size())]});
  }

  auto f = [&]() {
    Tape<double> t(false);
    auto [l, p] = forward(t);
    return FiniteDiffSample{l.value()(0, 0), signature(p)};
  };
  const FiniteDiffReport report = finite_diff_check(f, blocks, analytic, chosen, eps);

  const auto& worst = policy.parameters()[report.worst.block];
  res.passed = report.probed > 0 && report.max_rel_error < threshold;
  res.lines.push_back("batch: arm1, nav, bimanual, quad; loss " + fmt(loss.value()(0, 0)));
  res.lines.push_back(std::to_string(report.probed) + " probes compared, " + std::to_string(report.skipped) +
                      " skipped at L1 kinks, eps " + fmt(eps));
  res.lines.push_back("max relative error " + fmt(report.max_rel_error) + " at " + worst.name + "[" +
                      std::to_string(report.worst.index) + "] (analytic " + fmt(report.worst_analytic) +
                      ", numeric " + fmt(report.worst_numeric) + "); threshold " + fmt(threshold));
  if (!res.passed) {
    res.counterexample = report.probed == 0 ? "every probe straddled a kink"
                                            : worst.name + "[" + std::to_string(report.worst.index) + "]: analytic " +
                                                  fmt(report.worst_analytic) + " vs numeric " +
                                                  fmt(report.worst_numeric);
  }
  res.metrics = {{"max_rel_error", report.max_rel_error},
                 {"probed", report.probed},
                 {"skipped", report.skipped},
                 {"blocks_with_gradient", candidates.size()}};
  res.seconds = clock.seconds();
  return res;
}

// ---------------------------------------------------------------- mixture

VerifyResult verify_mixture(const MixtureSpec& mixture, const std::string& label, std::uint64_t seed, int draws,
                            double tolerance) {
  Stopwatch clock;
  VerifyResult res;
  res.name = "mixture";
  const MixtureSampler sampler(mixture);
  std::map<std::string, long> counts;
  Rng rng(seed);
  for (int i = 0; i < draws; ++i) ++counts[sampler.sample(rng)];
  double worst = 0;
  std::string worst_name;
  for (std::size_t i = 0; i < sampler.names().size(); ++i) {
    const auto& name = sampler.names()[i];
    const double freq = static_cast<double>(counts[name]) / draws;
    const double dev = std::abs(freq - sampler.probabilities()[i]);
    if (dev > worst) {
      worst = dev;
      worst_name = name;
    }
    if (dev > tolerance && res.passed) {
      res.passed = false;
      res.counterexample = label + ": '" + name + "' drawn with frequency " + fmt(freq) + ", weight " +
                           fmt(sampler.probabilities()[i]);
    }
  }
  res.lines.push_back(label + ": " + std::to_string(sampler.names().size()) + " datasets, " + std::to_string(draws) +
                      " draws, max |freq - weight| = " + fmt(worst) + " (" + worst_name + "), tolerance " +
                      fmt(tolerance));
  res.metrics = {{"label", label}, {"datasets", sampler.names().size()}, {"max_deviation", worst}};
  res.seconds = clock.seconds();
  return res;
}

// ---------------------------------------------------------------- relabel

double chi_square_critical(int dof, double significance) {
  if (dof < 1) throw ContractError("chi-square: degrees of freedom must be positive");
  return boost::math::quantile(boost::math::complement(boost::math::chi_squared(dof), significance));
}

VerifyResult verify_relabel(std::uint64_t seed, int draws, double significance) {
  Stopwatch clock;
  VerifyResult res;
  res.name = "relabel";
  // A synthetic shard whose goal view encodes the step index in its pixels,
  // so the relabeled index can be read back from the example's goal image.
  const int steps = 16;
  const int end = 3;
  DatasetShard shard;
  shard.header.dataset = "relabel-probe";
  shard.header.embodiment = "nav";
  shard.header.head = "navigation";
  shard.header.action_dim = 2;
  shard.header.vocab = 1;
  shard.header.goal_view = "navigation";
  shard.header.streams = {{"navigation", StreamKind::Image, {3, 2, 2}}, {"action", StreamKind::Action, {2}}};
  TrajectoryRecord rec;
  rec.embodiment = "nav";
  rec.instruction = 0;  // no instruction: the goal is never masked out
  rec.streams = {MatF(steps, 12), MatF::Zero(steps, 2)};
  for (int t = 0; t < steps; ++t) rec.streams[0].row(t).setConstant(static_cast<float>(t));
  shard.trajectories = {rec};
  const DataSource source(shard);

  ExampleOptions opts;
  opts.history = 5;
  opts.chunk = 1;
  const int bins = steps - end;
  std::vector<long> counts(static_cast<std::size_t>(bins), 0);
  Rng rng(seed);
  for (int i = 0; i < draws; ++i) {
    const TrainingExample ex = make_example(source, 0, end, opts, rng);
    if (!ex.task.goal) throw EvaluationError("verify relabel: example lost its goal");
    const int index = static_cast<int>(std::lround(ex.task.goal->pixels(0, 0)));
    if (index < end || index >= steps) {
      res.passed = false;
      res.counterexample = "goal index " + std::to_string(index) + " outside [" + std::to_string(end) + ", " +
                           std::to_string(steps) + ")";
      break;
    }
    ++counts[static_cast<std::size_t>(index - end)];
  }
  const double expected = static_cast<double>(draws) / bins;
  double stat = 0;
  for (long c : counts) stat += (c - expected) * (c - expected) / expected;
  const double critical = chi_square_critical(bins - 1, significance);
  if (res.passed && stat > critical) {
    res.passed = false;
    res.counterexample = "chi-square " + fmt(stat) + " exceeds critical value " + fmt(critical);
  }
  res.lines.push_back(std::to_string(draws) + " relabels of window end " + std::to_string(end) + " in a " +
                      std::to_string(steps) + "-step trajectory");
  res.lines.push_back("chi-square " + fmt(stat) + " on " + std::to_string(bins - 1) + " dof, critical " +
                      fmt(critical) + " at significance " + fmt(significance));
  res.metrics = {{"statistic", stat}, {"critical", critical}, {"dof", bins - 1}};
  res.seconds = clock.seconds();
  return res;
}

// ---------------------------------------------------------------- format

namespace {

template <class F>
std::string expect_throw(F&& f, const std::string& what) {
  try {
    f();
  } catch (const CorruptionError&) {
    return what == "corruption" ? "" : "raised a corruption error, expected " + what;
  } catch (const FormatError&) {
    return what == "format" ? "" : "raised a format error, expected " + what;
  } catch (const std::exception& e) {
    return std::string("raised an unexpected error: ") + e.what();
  }
  return "did not raise (expected a " + what + " error)";
}

bool same_bits(const MatF& a, const MatF& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::equal(a.data(), a.data() + a.size(), b.data(), [](float x, float y) {
           return std::bit_cast<std::uint32_t>(x) == std::bit_cast<std::uint32_t>(y);
         });
}

}  // namespace

VerifyResult verify_format(const Config& config, std::uint64_t seed) {
  Stopwatch clock;
  VerifyResult res;
  res.name = "format";
  auto fail = [&](const std::string& what) {
    if (res.passed) res.counterexample = what;
    res.passed = false;
  };

  std::vector<TrainingExample> probes;
  for (const std::string emb : {"arm1", "nav", "bimanual", "quad"}) {
    const DatasetShard shard = generate_dataset(emb, 2, derive_seed(seed, 7), config.policy.encoders.vocab);
    const auto bytes = encode_shard(shard);
    const DatasetShard back = decode_shard(bytes);
    if (encode_shard(back) != bytes) fail(emb + " shard: re-encoding changed the bytes");
    for (std::size_t i = 0; i < shard.trajectories.size(); ++i) {
      for (std::size_t s = 0; s < shard.trajectories[i].streams.size(); ++s) {
        if (!same_bits(shard.trajectories[i].streams[s], back.trajectories[i].streams[s])) {
          fail(emb + " shard: stream '" + shard.header.streams[s].name + "' of trajectory " + std::to_string(i) +
               " differs after decoding");
        }
      }
    }
    const auto cut = std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() * 2 / 3));
    if (auto e = expect_throw([&] { decode_shard(cut); }, "corruption"); !e.empty()) fail(emb + " truncated shard " + e);
    auto bad = bytes;
    bad[0] = 'Y';
    if (auto e = expect_throw([&] { decode_shard(bad); }, "format"); !e.empty()) fail(emb + " shard with bad magic " + e);
    TrajectoryRecord wrong = shard.trajectories[0];
    wrong.streams.back() = MatF::Zero(wrong.steps(), shard.header.action_dim + 1);
    if (auto e = expect_throw([&] { check_schema(shard.header, wrong); }, "format"); !e.empty()) {
      fail(emb + " schema mismatch " + e);
    }
    ExampleOptions opts;
    opts.history = config.policy.layout.history;
    opts.chunk = config.policy.head(shard.header.head).chunk;
    Rng rng(seed);
    probes.push_back(make_example(DataSource(back), 0, 1, opts, rng));
  }
  res.lines.push_back("XEDS1: 4 shards round-trip bit-exactly; truncation, magic and schema errors raised");

  Checkpoint ckpt;
  ckpt.config = config;
  const Policy<float> policy(config.policy, derive_seed(seed, 8));
  ckpt.parameters = policy.parameters();
  OptimizerState<float> opt = OptimizerState<float>::zeros(ckpt.parameters);
  Rng rng(derive_seed(seed, 9));
  for (auto& m : opt.m) m = detail::random_matrix<float>(rng, m.rows(), m.cols(), 1e-3);
  for (auto& v : opt.v) v = detail::random_matrix<float>(rng, v.rows(), v.cols(), 1e-3).cwiseAbs();
  opt.step = 17;
  ckpt.optimizer = opt;
  ckpt.step = 17;
  ckpt.metrics = {{"validation_mse", 0.125}};
  const auto bytes = encode_checkpoint(ckpt);
  const Checkpoint back = decode_checkpoint(bytes);
  if (encode_checkpoint(back) != bytes) fail("checkpoint: re-encoding changed the bytes");
  const Policy<float> reloaded(back.config.policy, back.parameters);
  for (const auto& ex : probes) {
    if (!same_bits(policy.act(ex.frames, ex.task, ex.head), reloaded.act(ex.frames, ex.task, ex.head))) {
      fail("checkpoint: reloaded '" + ex.head + "' head output differs");
    }
  }
  const auto cut = std::vector<std::uint8_t>(bytes.begin(), bytes.end() - 5);
  if (auto e = expect_throw([&] { decode_checkpoint(cut); }, "corruption"); !e.empty()) fail("truncated checkpoint " + e);
  res.lines.push_back("XCKPT1: " + std::to_string(bytes.size()) +
                      " bytes round-trip bit-exactly; reloaded forward outputs identical on 4 heads");
  res.metrics = {{"checkpoint_bytes", bytes.size()}};
  res.seconds = clock.seconds();
  return res;
}

}  // namespace xembody
