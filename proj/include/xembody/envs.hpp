#pragma once

// Toy embodiments with scripted experts. World coordinates are unit-square
// based; every camera is a 24x24 RGB procedural rendering.
//
//   arm1        workspace + wrist-left views, 7-D delta-EE action (xyz move,
//               three inert rotation dims, grip), pick-and-place to a goal.
//   nav         navigation view, 2-D relative waypoint, maps with walls.
//   nav-shifted nav with a shorter max step and a lateral drift.
//   bimanual    two wrist views + 14-D joint proprio, absolute joint targets
//               tracking an instruction-keyed reference.
//   quad        59-D proprio only, absolute joint targets, gait tracking reward.

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "xembody/observation.hpp"
#include "xembody/shard.hpp"

namespace xembody {

struct EmbodimentSpec {
  std::string name;
  std::string head;
  int action_dim = 0;
  std::vector<std::string> views;
  /// Proprio stream kind; empty when the embodiment has none.
  std::string proprio;
  int proprio_dim = 0;
  /// View used for goal images; empty when never goal-conditioned.
  std::string goal_view;
  /// Instruction template ids reset draws from; {0} means no language.
  std::vector<int> instructions;
  int horizon = 0;
  int resolution = 24;
};

/// Throws LookupError for unknown names.
const EmbodimentSpec& embodiment_spec(const std::string& name);
/// arm1, nav, bimanual, quad, nav-shifted.
const std::vector<std::string>& embodiment_names();

struct EnvState {
  std::string embodiment;
  int step = 0;
  int instruction = 0;
  bool done = false;
  // arm1
  Eigen::Vector3d ee = Eigen::Vector3d::Zero();
  Eigen::Vector3d object = Eigen::Vector3d::Zero();
  Eigen::Vector3d goal = Eigen::Vector3d::Zero();
  bool grip_closed = false;
  bool attached = false;
  // nav / nav-shifted
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
  Eigen::Vector2d target = Eigen::Vector2d::Zero();
  int map = 0;
  // bimanual / quad
  Eigen::VectorXd joints;
  Eigen::VectorXd velocities;
  Eigen::VectorXd previous_action;
  /// Gait clock offset (quad).
  int clock_offset = 0;
  /// Per-step mean absolute tracking error (bimanual).
  std::vector<double> tracking;
  /// Sum of per-step rewards so far (quad).
  double reward_total = 0;
};

struct ResetResult {
  EnvState state;
  ObservationFrame frame;
  /// Conditioning used at evaluation: the instruction when there is one,
  /// otherwise the goal image of the episode's final state.
  TaskSpec task;
};

struct StepResult {
  ObservationFrame frame;
  bool done = false;
  double reward = 0;
};

ResetResult reset(const std::string& embodiment, std::uint64_t seed);

/// Applies one action row. Throws DimensionError when the row does not match
/// the embodiment's head and ExecutionError on non-finite values.
StepResult step(EnvState& state, const Eigen::VectorXf& action);

ObservationFrame observe(const EnvState& state);
Image render(const EnvState& state, const std::string& view);

bool success(const EnvState& state);
/// Per-step gait tracking reward exp(-|q - q_ref|_1 / 12) (quad only).
double reward(const EnvState& state);

/// The expert's next single action.
Eigen::VectorXf expert_action(const EnvState& state);
/// `chunk` expert actions obtained by rolling the expert forward on a copy.
MatF expert_chunk(const EnvState& state, int chunk);

/// Reference joint targets at time `t` (bimanual: keyed by instruction; quad:
/// gait clock `t + clock_offset`).
Eigen::VectorXd bimanual_reference(int instruction, int t);
Eigen::VectorXd quad_reference(int clock);
/// Standing pose the gait oscillates around.
Eigen::VectorXd quad_stance();

/// Axis-aligned wall rectangles {x0, y0, x1, y1} of a nav map.
const std::vector<Eigen::Vector4d>& nav_map(int id);
int nav_map_count();

/// Seeded expert rollouts, one shard. Each trajectory ends with the terminal
/// observation paired with the expert's action there.
DatasetShard generate_dataset(const std::string& embodiment, int trajectories, std::uint64_t seed, int vocab,
                              const std::string& dataset = {});

}  // namespace xembody
