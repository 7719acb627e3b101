#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffplan/rng.hpp"
#include "diffplan/types.hpp"

namespace diffplan {

// Synthetic continuous-control tasks on the unit arena [-1, 1]^2. All tasks
// share action space A = 2 (a planar velocity command, clamped to [-1, 1]).
// Per-step rewards are shaped in [-2, 0] plus a +1 bonus while the success
// predicate holds.
struct TaskSpec {
  std::string task_id;
  int state_dim = 4;
  int action_dim = 2;
  enum class Dynamics { kPoint, kPush } dynamics = Dynamics::kPoint;
  enum class Reward { kReachDist, kReachObstacle, kPushDist } reward =
      Reward::kReachDist;
  double velocity_scale = 0.1;
  double success_radius = 0.05;
  int episode_len = 50;
  // Initial agent position box and goal box, per axis.
  double init_lo = -0.9, init_hi = 0.9;
  double goal_lo = -0.8, goal_hi = 0.8;
  bool randomize_goal = true;
  Eigen::Vector2d fixed_goal{0.7, 0.0};
  // Obstacle penalty (kReachObstacle only).
  Eigen::Vector2d obstacle_pos{0.0, 0.0};
  double obstacle_radius = 0.35;
  double obstacle_weight = 1.0;
  // Push dynamics (kPush only).
  double contact_radius = 0.12;
  double puck_lo = -0.25, puck_hi = 0.25;
};

struct EnvState {
  TaskSpec spec;
  int t = 0;
  Vec s;                 // layout per task, see tasks.cpp
  Eigen::Vector2d goal;
  RngStream rng{0};
  bool done = false;
  bool success = false;  // latched once true
};

struct StepResult {
  double reward = 0;
  bool done = false;
  bool success = false;
};

// Fresh episode; deterministic given seed. Samples a goal from the goal box
// when goal randomization is on, else uses the spec's fixed goal.
EnvState reset(const TaskSpec& spec, uint64_t seed);

// Advances one step. Actions are clamped to [-1, 1] before dynamics.
// Stepping a finished episode is a contract violation.
StepResult step(EnvState& env, const Eigen::Vector2d& action);

// The default desk suite: point_reach, obstacle_reach, push, slow_reach.
std::vector<TaskSpec> register_default_suite(int episode_len = 50);

const TaskSpec& find_task(const std::vector<TaskSpec>& suite,
                          const std::string& task_id);

// Proportional controller used for dataset generation and as an oracle in
// evaluation tests. Stateless; reads only the current state.
Eigen::Vector2d scripted_action(const EnvState& env);

}  // namespace diffplan
