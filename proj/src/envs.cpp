#include "xembody/envs.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <queue>

#include "xembody/rng.hpp"

namespace xembody {

namespace {

constexpr double kPi = 3.14159265358979323846;

// arm1
constexpr double kArmMaxDelta = 0.1;
constexpr double kGraspRadius = 0.05;
constexpr double kPlaceRadius = 0.05;
constexpr double kArmZMax = 0.5;
constexpr double kArmGain = 0.5;
constexpr double kArmTrigger = 0.02;
// nav
constexpr double kNavMaxStep = 0.2;
constexpr double kNavShiftedMaxStep = 0.12;
constexpr double kNavDrift = 0.02;
constexpr double kNavSuccess = 0.1;
constexpr double kWallMargin = 0.02;
// joints
constexpr double kRateLimit = 0.15;
constexpr int kBimanualJoints = 14;
constexpr int kQuadJoints = 12;
constexpr int kTrackingWindow = 10;
constexpr double kTrackingTolerance = 0.05;
constexpr double kGaitHz = 2.0;
constexpr double kQuadDt = 1.0 / 20.0;

const std::vector<EmbodimentSpec>& specs() {
  static const std::vector<EmbodimentSpec> s = [] {
    std::vector<EmbodimentSpec> v;
    v.push_back({"arm1", "single-arm", 7, {"workspace", "wrist-left"}, "", 0, "workspace", {1, 2, 3, 4}, 40, 24});
    v.push_back({"nav", "navigation", 2, {"navigation"}, "", 0, "navigation", {0}, 40, 24});
    v.push_back({"bimanual", "bimanual", 14, {"wrist-left", "wrist-right"}, "bimanual", 14, "wrist-left", {5, 6, 7, 8}, 40, 24});
    v.push_back({"quad", "quadruped", 12, {}, "quadruped", 59, "", {9}, 200, 24});
    v.push_back({"nav-shifted", "navigation", 2, {"navigation"}, "", 0, "navigation", {0}, 40, 24});
    return v;
  }();
  return s;
}

bool is_nav(const EnvState& s) { return s.embodiment == "nav" || s.embodiment == "nav-shifted"; }

// ---------------------------------------------------------------- rendering

struct Canvas {
  int size;
  MatF pixels;  // [3, size*size]

  explicit Canvas(int n) : size(n), pixels(MatF::Zero(3, n * n)) {}

  /// Composites an axis-aligned rectangle given in pixel units with exact
  /// area coverage, so sub-pixel positions stay visible.
  void rect(double x0, double y0, double x1, double y1, const Eigen::Vector3f& color, double alpha = 1.0) {
    const int px0 = std::max(0, static_cast<int>(std::floor(x0)));
    const int px1 = std::min(size - 1, static_cast<int>(std::ceil(x1)) - 1);
    const int py0 = std::max(0, static_cast<int>(std::floor(y0)));
    const int py1 = std::min(size - 1, static_cast<int>(std::ceil(y1)) - 1);
    for (int y = py0; y <= py1; ++y) {
      const double cy = std::max(0.0, std::min(y1, y + 1.0) - std::max(y0, static_cast<double>(y)));
      for (int x = px0; x <= px1; ++x) {
        const double cx = std::max(0.0, std::min(x1, x + 1.0) - std::max(x0, static_cast<double>(x)));
        const float a = static_cast<float>(alpha * cx * cy);
        if (a <= 0) continue;
        for (int c = 0; c < 3; ++c) {
          float& p = pixels(c, y * size + x);
          p = p * (1 - a) + color[c] * a;
        }
      }
    }
  }

  /// A vertical bar filling `fraction` of the height from the bottom.
  void bar(double x0, double x1, double fraction, const Eigen::Vector3f& color) {
    fraction = std::clamp(fraction, 0.0, 1.0);
    rect(x0, size * (1 - fraction), x1, size, color);
  }

  Image image(const std::string& view) const { return {view, {3, size, size}, pixels}; }
};

const Eigen::Vector3f kRed(1, 0, 0), kGreen(0, 1, 0), kBlue(0, 0, 1), kMagenta(1, 0, 1), kGray(0.5f, 0.5f, 0.5f),
    kTable(0.1f, 0.1f, 0.1f), kYellow(1, 1, 0);

// arm1 workspace: the table occupies pixel columns [0, 21), the last three
// columns hold z gauges for the end effector and the object.
constexpr double kSceneWidth = 21;

Image render_workspace(const EnvState& s, int n) {
  Canvas c(n);
  c.rect(0, 0, kSceneWidth, n, kTable);
  auto square = [&](const Eigen::Vector3d& p, double half, const Eigen::Vector3f& color) {
    c.rect((p.x() - half) * kSceneWidth, (p.y() - half) * n, (p.x() + half) * kSceneWidth, (p.y() + half) * n, color);
  };
  square(s.goal, 0.08, kGreen);
  square(s.object, 0.06, kBlue);
  square(s.ee, 0.04, s.grip_closed ? kMagenta : kRed);
  c.bar(kSceneWidth, kSceneWidth + 1.5, s.ee.z() / kArmZMax, kRed);
  c.bar(kSceneWidth + 1.5, n, s.object.z() / kArmZMax, kBlue);
  return c.image("workspace");
}

// Egocentric view: +-0.5 world units around the end effector, so the object
// and goal stay in frame; sprite brightness falls off with height difference.
Image render_arm_wrist(const EnvState& s, int n) {
  Canvas c(n);
  const double span = 0.5;
  const double scale = n / (2 * span);
  auto square = [&](const Eigen::Vector3d& p, double half, const Eigen::Vector3f& color) {
    const double dz = std::abs(p.z() - s.ee.z());
    const double a = std::max(0.2, 1.0 - dz / kArmZMax);
    const double x = (p.x() - s.ee.x() + span) * scale, y = (p.y() - s.ee.y() + span) * scale;
    c.rect(x - half * scale, y - half * scale, x + half * scale, y + half * scale, color, a);
  };
  square(s.goal, 0.08, kGreen);
  square(s.object, 0.06, kBlue);
  c.rect(n / 2.0 - 1, n / 2.0 - 1, n / 2.0 + 1, n / 2.0 + 1, s.grip_closed ? kMagenta : kRed);
  return c.image("wrist-left");
}

Image render_nav(const EnvState& s, int n) {
  Canvas c(n);
  for (const auto& w : nav_map(s.map)) c.rect(w[0] * n, w[1] * n, w[2] * n, w[3] * n, kGray);
  const double h = 0.04;
  c.rect((s.position.x() - h) * n, (s.position.y() - h) * n, (s.position.x() + h) * n, (s.position.y() + h) * n, kRed);
  return c.image("navigation");
}

// Seven joint bars (three pixels each) and a phase bar in the last columns.
Image render_joints(const EnvState& s, const std::string& view, int first, int n, int horizon) {
  Canvas c(n);
  for (int j = 0; j < 7; ++j) {
    c.bar(3.0 * j + 0.5, 3.0 * j + 2.5, (s.joints[first + j] + 1.5) / 3.0, kRed);
  }
  c.bar(21.5, n, static_cast<double>(s.step) / horizon, kYellow);
  return c.image(view);
}

// ------------------------------------------------------------------ nav

bool inside_wall(const Eigen::Vector2d& p, int map, double margin) {
  for (const auto& w : nav_map(map)) {
    if (p.x() >= w[0] - margin && p.x() <= w[2] + margin && p.y() >= w[1] - margin && p.y() <= w[3] + margin) return true;
  }
  return false;
}

bool free_point(const Eigen::Vector2d& p, int map) {
  return p.x() >= 0 && p.x() <= 1 && p.y() >= 0 && p.y() <= 1 && !inside_wall(p, map, kWallMargin);
}

bool free_segment(const Eigen::Vector2d& a, const Eigen::Vector2d& b, int map) {
  const int samples = std::max(1, static_cast<int>(std::ceil((b - a).norm() / 0.005)));
  for (int i = 0; i <= samples; ++i) {
    if (!free_point(a + (b - a) * (static_cast<double>(i) / samples), map)) return false;
  }
  return true;
}

/// Shortest path over the visibility graph of wall corners; returns the next
/// node to head for.
Eigen::Vector2d nav_next_node(const Eigen::Vector2d& from, const Eigen::Vector2d& to, int map) {
  if (free_segment(from, to, map)) return to;
  std::vector<Eigen::Vector2d> nodes{from, to};
  const double m = 2 * kWallMargin;
  for (const auto& w : nav_map(map)) {
    for (double x : {w[0] - m, w[2] + m}) {
      for (double y : {w[1] - m, w[3] + m}) {
        if (free_point({x, y}, map)) nodes.emplace_back(x, y);
      }
    }
  }
  const std::size_t n = nodes.size();
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<int> prev(n, -1);
  std::vector<bool> finished(n, false);
  dist[0] = 0;
  for (std::size_t iter = 0; iter < n; ++iter) {
    std::size_t u = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (!finished[i] && (u == n || dist[i] < dist[u])) u = i;
    }
    if (u == n || !std::isfinite(dist[u])) break;
    finished[u] = true;
    for (std::size_t v = 0; v < n; ++v) {
      if (finished[v]) continue;
      const double d = dist[u] + (nodes[v] - nodes[u]).norm();
      if (d < dist[v] && free_segment(nodes[u], nodes[v], map)) {
        dist[v] = d;
        prev[v] = static_cast<int>(u);
      }
    }
  }
  if (prev[1] < 0) return to;  // unreachable; head straight and slide
  int node = 1;
  while (prev[static_cast<std::size_t>(node)] != 0) node = prev[static_cast<std::size_t>(node)];
  return nodes[static_cast<std::size_t>(node)];
}

Eigen::Vector2d nav_sample_free(Rng& rng, int map) {
  for (;;) {
    Eigen::Vector2d p(rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92));
    if (!inside_wall(p, map, 0.06)) return p;
  }
}

// --------------------------------------------------------------- joints

struct Sinusoid {
  double amplitude, frequency, phase;
};

struct BimanualTask {
  std::array<double, kBimanualJoints> centre;
  std::array<std::array<Sinusoid, 3>, kBimanualJoints> terms;
};

const BimanualTask& bimanual_task(int instruction) {
  static const std::vector<BimanualTask> tasks = [] {
    std::vector<BimanualTask> out;
    for (int id = 0; id < 4; ++id) {
      Rng rng(derive_seed(0xB1A0, static_cast<std::uint64_t>(id)));
      BimanualTask t{};
      for (int j = 0; j < kBimanualJoints; ++j) {
        t.centre[static_cast<std::size_t>(j)] = rng.uniform(-0.5, 0.5);
        for (int m = 0; m < 3; ++m) {
          t.terms[static_cast<std::size_t>(j)][static_cast<std::size_t>(m)] = {rng.uniform(0.02, 0.12), m + 1.0,
                                                                               rng.uniform(0, 2 * kPi)};
        }
      }
      out.push_back(t);
    }
    return out;
  }();
  if (instruction < 5 || instruction > 8) throw RangeError("bimanual instruction must be in 5..8");
  return tasks[static_cast<std::size_t>(instruction - 5)];
}

void rate_limited_move(EnvState& s, const Eigen::VectorXd& command) {
  const Eigen::VectorXd before = s.joints;
  s.joints = (s.joints + (command - s.joints).cwiseMax(-kRateLimit).cwiseMin(kRateLimit)).cwiseMax(-kPi).cwiseMin(kPi);
  s.velocities = s.joints - before;
  s.previous_action = command;
}

Eigen::VectorXf quad_proprio(const EnvState& s) {
  Eigen::VectorXf p = Eigen::VectorXf::Zero(59);
  p.segment(0, 12) = s.joints.cast<float>();
  p.segment(12, 12) = (s.velocities / kQuadDt).cast<float>();
  p.segment(24, 12) = s.previous_action.cast<float>();
  p.segment(36, 3) << 0, 0, -1;
  const double theta = 2 * kPi * kGaitHz * (s.step + s.clock_offset) * kQuadDt;
  p.segment(39, 4) << static_cast<float>(std::sin(theta)), static_cast<float>(std::cos(theta)),
      static_cast<float>(std::sin(theta + kPi)), static_cast<float>(std::cos(theta + kPi));
  return p;
}

// ------------------------------------------------------------------ experts

Eigen::VectorXf arm_expert(const EnvState& s) {
  // Proportional approach with gain kArmGain, saturated at the action bound. Grip and release trigger well
  // inside the 0.05 radii so small imitation errors still attach and place.
  Eigen::VectorXf a = Eigen::VectorXf::Zero(7);
  const Eigen::Vector3d target = s.attached ? s.goal : s.object;
  const Eigen::Vector3d delta = (kArmGain * (target - s.ee)).cwiseMax(-kArmMaxDelta).cwiseMin(kArmMaxDelta);
  const Eigen::Vector3d next = s.ee + delta;
  a.head<3>() = delta.cast<float>();
  if (s.attached) {
    a[6] = (next - s.goal).norm() <= kArmTrigger ? 0.0f : 1.0f;
  } else {
    a[6] = (next - s.object).norm() <= kArmTrigger ? 1.0f : 0.0f;
  }
  return a;
}

Eigen::VectorXf nav_expert(const EnvState& s) {
  const Eigen::Vector2d node = nav_next_node(s.position, s.target, s.map);
  Eigen::Vector2d d = node - s.position;
  const double limit = s.embodiment == "nav-shifted" ? kNavShiftedMaxStep : kNavMaxStep;
  if (d.norm() > limit) d *= limit / d.norm();
  return d.cast<float>();
}

}  // namespace

// ------------------------------------------------------------------ public

const EmbodimentSpec& embodiment_spec(const std::string& name) {
  for (const auto& s : specs()) {
    if (s.name == name) return s;
  }
  throw LookupError("unknown embodiment '" + name + "'");
}

const std::vector<std::string>& embodiment_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& s : specs()) n.push_back(s.name);
    return n;
  }();
  return names;
}

const std::vector<Eigen::Vector4d>& nav_map(int id) {
  static const std::vector<std::vector<Eigen::Vector4d>> maps{
      {},
      {{0.4, 0.3, 0.6, 0.7}},
      {{0.25, 0.0, 0.35, 0.6}, {0.65, 0.4, 0.75, 1.0}},
      {{0.2, 0.2, 0.35, 0.35}, {0.65, 0.2, 0.8, 0.35}, {0.2, 0.65, 0.35, 0.8}, {0.65, 0.65, 0.8, 0.8}},
  };
  if (id < 0 || id >= static_cast<int>(maps.size())) throw LookupError("unknown nav map " + std::to_string(id));
  return maps[static_cast<std::size_t>(id)];
}

int nav_map_count() { return 4; }

Eigen::VectorXd bimanual_reference(int instruction, int t) {
  const BimanualTask& task = bimanual_task(instruction);
  Eigen::VectorXd r(kBimanualJoints);
  for (int j = 0; j < kBimanualJoints; ++j) {
    double v = task.centre[static_cast<std::size_t>(j)];
    for (const auto& term : task.terms[static_cast<std::size_t>(j)]) {
      v += term.amplitude * std::sin(2 * kPi * term.frequency * t / 40.0 + term.phase);
    }
    r[j] = v;
  }
  return r;
}

Eigen::VectorXd quad_stance() {
  Eigen::VectorXd q(kQuadJoints);
  for (int leg = 0; leg < 4; ++leg) q.segment(3 * leg, 3) << 0.0, 0.8, -1.5;
  return q;
}

Eigen::VectorXd quad_reference(int clock) {
  // Trot: diagonal legs (FL, RR) and (FR, RL) in antiphase; calves lag the
  // thighs by a quarter cycle.
  static const std::array<double, 3> amplitude{0.05, 0.2, 0.2};
  static const std::array<double, 4> leg_phase{0, kPi, kPi, 0};
  static const std::array<double, 3> joint_phase{0, 0, kPi / 2};
  Eigen::VectorXd q = quad_stance();
  const double theta = 2 * kPi * kGaitHz * clock * kQuadDt;
  for (int leg = 0; leg < 4; ++leg) {
    for (int j = 0; j < 3; ++j) {
      const double phase = leg_phase[static_cast<std::size_t>(leg)] + joint_phase[static_cast<std::size_t>(j)];
      q[3 * leg + j] += amplitude[static_cast<std::size_t>(j)] * std::sin(theta + phase);
    }
  }
  return q;
}

ObservationFrame observe(const EnvState& s) {
  const EmbodimentSpec& spec = embodiment_spec(s.embodiment);
  ObservationFrame f;
  f.embodiment = s.embodiment == "nav-shifted" ? "nav" : s.embodiment;
  for (const auto& view : spec.views) f.images.emplace(view, render(s, view));
  if (spec.proprio == "bimanual") f.proprio.emplace("bimanual", s.joints.cast<float>());
  if (spec.proprio == "quadruped") f.proprio.emplace("quadruped", quad_proprio(s));
  return f;
}

Image render(const EnvState& s, const std::string& view) {
  const EmbodimentSpec& spec = embodiment_spec(s.embodiment);
  if (std::find(spec.views.begin(), spec.views.end(), view) == spec.views.end()) {
    throw LookupError("embodiment '" + s.embodiment + "' has no view '" + view + "'");
  }
  const int n = spec.resolution;
  if (s.embodiment == "arm1") return view == "workspace" ? render_workspace(s, n) : render_arm_wrist(s, n);
  if (is_nav(s)) return render_nav(s, n);
  return render_joints(s, view, view == "wrist-left" ? 0 : 7, n, spec.horizon);
}

bool success(const EnvState& s) {
  if (s.embodiment == "arm1") return !s.grip_closed && !s.attached && (s.object - s.goal).norm() <= kPlaceRadius;
  if (is_nav(s)) return (s.position - s.target).norm() <= kNavSuccess;
  if (s.embodiment == "bimanual") {
    if (static_cast<int>(s.tracking.size()) < kTrackingWindow) return false;
    double total = 0;
    for (auto it = s.tracking.end() - kTrackingWindow; it != s.tracking.end(); ++it) total += *it;
    return total / kTrackingWindow < kTrackingTolerance;
  }
  return false;  // quad episodes run to the horizon and are scored by reward
}

double reward(const EnvState& s) {
  if (s.embodiment != "quad") return 0;
  return std::exp(-(s.joints - quad_reference(s.step + s.clock_offset)).lpNorm<1>() / 12.0);
}

ResetResult reset(const std::string& embodiment, std::uint64_t seed) {
  const EmbodimentSpec& spec = embodiment_spec(embodiment);
  Rng rng(derive_seed(seed, 0xE5E7));
  EnvState s;
  s.embodiment = embodiment;
  s.instruction = spec.instructions[static_cast<std::size_t>(rng.below(spec.instructions.size()))];
  if (embodiment == "arm1") {
    const int q = s.instruction - 1;
    const double gx = (q % 2 == 0) ? 0.1 : 0.5, gy = (q / 2 == 0) ? 0.1 : 0.5;
    s.goal = {rng.uniform(gx, gx + 0.4), rng.uniform(gy, gy + 0.4), 0};
    do {
      s.object = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), 0};
    } while ((s.object - s.goal).norm() < 0.15);
    s.ee = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.2, 0.4)};
  } else if (is_nav(s)) {
    s.map = static_cast<int>(rng.below(static_cast<std::uint64_t>(nav_map_count())));
    s.position = nav_sample_free(rng, s.map);
    do {
      s.target = nav_sample_free(rng, s.map);
    } while ((s.target - s.position).norm() < 0.3);
  } else if (embodiment == "bimanual") {
    s.joints = bimanual_reference(s.instruction, 0);
    for (int j = 0; j < kBimanualJoints; ++j) s.joints[j] += rng.uniform(-0.3, 0.3);
    s.velocities = Eigen::VectorXd::Zero(kBimanualJoints);
    s.previous_action = s.joints;
  } else {
    s.clock_offset = static_cast<int>(rng.below(10));
    s.joints = quad_reference(s.clock_offset);
    for (int j = 0; j < kQuadJoints; ++j) s.joints[j] += rng.uniform(-0.2, 0.2);
    s.velocities = Eigen::VectorXd::Zero(kQuadJoints);
    s.previous_action = quad_stance();
  }

  ResetResult r{s, observe(s), {}};
  r.task.instruction = s.instruction;
  if (s.instruction == 0 && !spec.goal_view.empty()) {
    EnvState final_state = s;
    if (is_nav(s)) final_state.position = s.target;
    r.task.goal = render(final_state, spec.goal_view);
  }
  return r;
}

StepResult step(EnvState& s, const Eigen::VectorXf& action) {
  const EmbodimentSpec& spec = embodiment_spec(s.embodiment);
  if (action.size() != spec.action_dim) {
    throw DimensionError("embodiment '" + s.embodiment + "' takes " + std::to_string(spec.action_dim) +
                         "-D actions from head '" + spec.head + "', got " + std::to_string(action.size()));
  }
  if (!action.allFinite()) throw ExecutionError("non-finite action for embodiment '" + s.embodiment + "'");
  const Eigen::VectorXd a = action.cast<double>();

  if (s.embodiment == "arm1") {
    s.ee += a.head<3>().cwiseMax(-kArmMaxDelta).cwiseMin(kArmMaxDelta);
    s.ee = s.ee.cwiseMax(Eigen::Vector3d(0, 0, 0)).cwiseMin(Eigen::Vector3d(1, 1, kArmZMax));
    if (s.attached) s.object = s.ee;  // carried through this move
    s.grip_closed = a[6] >= 0.5;
    if (s.grip_closed) {
      if (!s.attached && (s.ee - s.object).norm() <= kGraspRadius) s.attached = true;
      if (s.attached) s.object = s.ee;
    } else {
      s.attached = false;
      s.object.z() = 0;
    }
  } else if (is_nav(s)) {
    Eigen::Vector2d d = a.head<2>();
    const double limit = s.embodiment == "nav-shifted" ? kNavShiftedMaxStep : kNavMaxStep;
    if (d.norm() > limit) d *= limit / d.norm();
    if (s.embodiment == "nav-shifted" && d.norm() > 0) d += kNavDrift * Eigen::Vector2d(-d.y(), d.x()) / d.norm();
    // Blocked motion slides along whichever axis is still free.
    for (const Eigen::Vector2d& candidate : {d, Eigen::Vector2d(d.x(), 0), Eigen::Vector2d(0, d.y())}) {
      if (free_segment(s.position, s.position + candidate, s.map)) {
        s.position += candidate;
        break;
      }
    }
  } else if (s.embodiment == "bimanual") {
    rate_limited_move(s, a);
  } else {
    rate_limited_move(s, a);
  }
  ++s.step;
  double r = 0;
  if (s.embodiment == "bimanual") {
    s.tracking.push_back((s.joints - bimanual_reference(s.instruction, s.step)).cwiseAbs().mean());
  } else if (s.embodiment == "quad") {
    r = reward(s);
    s.reward_total += r;
  }
  s.done = success(s) || s.step >= spec.horizon;
  return {observe(s), s.done, r};
}

Eigen::VectorXf expert_action(const EnvState& s) {
  if (s.embodiment == "arm1") return arm_expert(s);
  if (is_nav(s)) return nav_expert(s);
  if (s.embodiment == "bimanual") return bimanual_reference(s.instruction, s.step + 1).cast<float>();
  return quad_reference(s.step + 1 + s.clock_offset).cast<float>();
}

MatF expert_chunk(const EnvState& state, int chunk) {
  EnvState sim = state;
  const int dim = embodiment_spec(state.embodiment).action_dim;
  MatF out(chunk, dim);
  for (int r = 0; r < chunk; ++r) {
    const Eigen::VectorXf a = expert_action(sim);
    out.row(r) = a.transpose();
    step(sim, a);
  }
  return out;
}

DatasetShard generate_dataset(const std::string& embodiment, int trajectories, std::uint64_t seed, int vocab,
                              const std::string& dataset) {
  if (trajectories < 0) throw ContractError("generate_dataset: negative trajectory count");
  const EmbodimentSpec& spec = embodiment_spec(embodiment);
  DatasetShard shard;
  ShardHeader& h = shard.header;
  h.dataset = dataset.empty() ? embodiment : dataset;
  h.embodiment = observe(reset(embodiment, seed).state).embodiment;
  h.head = spec.head;
  h.action_dim = spec.action_dim;
  h.vocab = vocab;
  h.goal_view = spec.goal_view;
  for (const auto& v : spec.views) h.streams.push_back({v, StreamKind::Image, {3, spec.resolution, spec.resolution}});
  if (!spec.proprio.empty()) h.streams.push_back({spec.proprio, StreamKind::Proprio, {spec.proprio_dim}});
  h.streams.push_back({"action", StreamKind::Action, {spec.action_dim}});

  for (int i = 0; i < trajectories; ++i) {
    ResetResult r = reset(embodiment, derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::vector<ObservationFrame> frames{r.frame};
    std::vector<Eigen::VectorXf> actions;
    EnvState& s = r.state;
    while (!s.done) {
      actions.push_back(expert_action(s));
      frames.push_back(step(s, actions.back()).frame);
    }
    actions.push_back(expert_action(s));

    TrajectoryRecord t;
    t.embodiment = h.embodiment;
    t.instruction = s.instruction;
    const Eigen::Index steps = static_cast<Eigen::Index>(frames.size());
    for (const auto& st : h.streams) {
      MatF m(steps, st.width());
      for (Eigen::Index k = 0; k < steps; ++k) {
        const auto& f = frames[static_cast<std::size_t>(k)];
        if (st.kind == StreamKind::Image) {
          const MatF& px = f.images.at(st.name).pixels;
          std::copy_n(px.data(), st.width(), m.row(k).data());
        } else if (st.kind == StreamKind::Proprio) {
          m.row(k) = f.proprio.at(st.name).transpose();
        } else {
          m.row(k) = actions[static_cast<std::size_t>(k)].transpose();
        }
      }
      t.streams.push_back(std::move(m));
    }
    shard.trajectories.push_back(std::move(t));
  }
  return shard;
}

}  // namespace xembody
