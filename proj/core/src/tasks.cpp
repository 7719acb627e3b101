#include "diffplan/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "diffplan/errors.hpp"

namespace diffplan {

// State layouts:
//   point tasks: s = (pos_x, pos_y, goal_x, goal_y)
//   push:        s = (agent_x, agent_y, puck_x, puck_y), fixed goal
namespace {

Eigen::Vector2d clamp_box(const Eigen::Vector2d& v, double lo, double hi) {
  return {std::clamp(v.x(), lo, hi), std::clamp(v.y(), lo, hi)};
}

double shaped_reward(const TaskSpec& spec, const Vec& s,
                     const Eigen::Vector2d& goal) {
  switch (spec.reward) {
    case TaskSpec::Reward::kReachDist: {
      Eigen::Vector2d pos = s.head<2>();
      return std::max(-2.0, -(pos - goal).norm());
    }
    case TaskSpec::Reward::kReachObstacle: {
      Eigen::Vector2d pos = s.head<2>();
      double d_obst = (pos - spec.obstacle_pos).norm();
      double penalty = spec.obstacle_weight *
                       std::max(0.0, 1.0 - d_obst / spec.obstacle_radius);
      return std::max(-2.0, -(pos - goal).norm() - penalty);
    }
    case TaskSpec::Reward::kPushDist: {
      Eigen::Vector2d agent = s.head<2>();
      Eigen::Vector2d puck = s.segment<2>(2);
      return std::max(-2.0,
                      -(puck - goal).norm() - 0.3 * (agent - puck).norm());
    }
  }
  return 0.0;
}

bool success_predicate(const TaskSpec& spec, const Vec& s,
                       const Eigen::Vector2d& goal) {
  if (spec.dynamics == TaskSpec::Dynamics::kPush) {
    Eigen::Vector2d puck = s.segment<2>(2);
    return (puck - goal).norm() < spec.success_radius;
  }
  Eigen::Vector2d pos = s.head<2>();
  return (pos - goal).norm() < spec.success_radius;
}

}  // namespace

EnvState reset(const TaskSpec& spec, uint64_t seed) {
  if (spec.episode_len < 1)
    throw std::invalid_argument("reset: episode_len must be >= 1");
  EnvState env;
  env.spec = spec;
  env.rng = RngStream(seed);
  env.t = 0;
  env.done = false;
  env.success = false;

  Eigen::Vector2d pos{env.rng.uniform(spec.init_lo, spec.init_hi),
                      env.rng.uniform(spec.init_lo, spec.init_hi)};
  env.goal = spec.randomize_goal
                 ? Eigen::Vector2d{env.rng.uniform(spec.goal_lo, spec.goal_hi),
                                   env.rng.uniform(spec.goal_lo, spec.goal_hi)}
                 : spec.fixed_goal;

  env.s = Vec(spec.state_dim);
  if (spec.dynamics == TaskSpec::Dynamics::kPush) {
    Eigen::Vector2d puck{env.rng.uniform(spec.puck_lo, spec.puck_hi),
                         env.rng.uniform(spec.puck_lo, spec.puck_hi)};
    env.s << pos.x(), pos.y(), puck.x(), puck.y();
  } else {
    env.s << pos.x(), pos.y(), env.goal.x(), env.goal.y();
  }
  return env;
}

StepResult step(EnvState& env, const Eigen::Vector2d& action) {
  if (env.done) throw ContractViolation("step: episode already finished");
  if (!action.allFinite())
    throw std::invalid_argument("step: non-finite action");

  const TaskSpec& spec = env.spec;
  Eigen::Vector2d a = clamp_box(action, -1.0, 1.0);

  if (spec.dynamics == TaskSpec::Dynamics::kPush) {
    Eigen::Vector2d agent = env.s.head<2>();
    Eigen::Vector2d puck = env.s.segment<2>(2);
    agent = clamp_box(agent + spec.velocity_scale * a, -1.0, 1.0);
    // Rigid-disk push: resolve overlap by moving the puck out along the
    // agent-to-puck direction.
    Eigen::Vector2d delta = puck - agent;
    double d = delta.norm();
    if (d < spec.contact_radius) {
      Eigen::Vector2d dir = d > 1e-12 ? Eigen::Vector2d(delta / d)
                                      : Eigen::Vector2d(1.0, 0.0);
      puck = clamp_box(agent + spec.contact_radius * dir, -1.0, 1.0);
    }
    env.s << agent.x(), agent.y(), puck.x(), puck.y();
  } else {
    Eigen::Vector2d pos = env.s.head<2>();
    pos = clamp_box(pos + spec.velocity_scale * a, -1.0, 1.0);
    env.s.head<2>() = pos;
  }

  env.t += 1;
  bool succ_now = success_predicate(spec, env.s, env.goal);
  if (succ_now) env.success = true;

  StepResult res;
  res.reward = shaped_reward(spec, env.s, env.goal) + (succ_now ? 1.0 : 0.0);
  res.done = env.t >= spec.episode_len;
  res.success = env.success;
  env.done = res.done;
  return res;
}

std::vector<TaskSpec> register_default_suite(int episode_len) {
  std::vector<TaskSpec> suite;

  TaskSpec reach;
  reach.task_id = "point_reach";
  reach.dynamics = TaskSpec::Dynamics::kPoint;
  reach.reward = TaskSpec::Reward::kReachDist;
  reach.velocity_scale = 0.1;
  reach.episode_len = episode_len;
  suite.push_back(reach);

  TaskSpec obstacle = reach;
  obstacle.task_id = "obstacle_reach";
  obstacle.reward = TaskSpec::Reward::kReachObstacle;
  suite.push_back(obstacle);

  TaskSpec push;
  push.task_id = "push";
  push.dynamics = TaskSpec::Dynamics::kPush;
  push.reward = TaskSpec::Reward::kPushDist;
  push.velocity_scale = 0.1;
  push.episode_len = episode_len;
  push.randomize_goal = false;
  push.fixed_goal = {0.55, 0.0};
  push.success_radius = 0.10;
  push.init_lo = -0.9;
  push.init_hi = -0.4;
  push.puck_lo = -0.15;
  push.puck_hi = 0.15;
  suite.push_back(push);

  TaskSpec slow = reach;
  slow.task_id = "slow_reach";
  slow.velocity_scale = 0.05;
  slow.init_lo = -0.5;
  slow.init_hi = 0.5;
  slow.goal_lo = -0.6;
  slow.goal_hi = 0.6;
  suite.push_back(slow);

  return suite;
}

const TaskSpec& find_task(const std::vector<TaskSpec>& suite,
                          const std::string& task_id) {
  for (const auto& spec : suite)
    if (spec.task_id == task_id) return spec;
  throw std::invalid_argument("unknown task_id: " + task_id);
}

Eigen::Vector2d scripted_action(const EnvState& env) {
  const TaskSpec& spec = env.spec;
  constexpr double kGain = 5.0;

  if (spec.dynamics == TaskSpec::Dynamics::kPush) {
    Eigen::Vector2d agent = env.s.head<2>();
    Eigen::Vector2d puck = env.s.segment<2>(2);
    Eigen::Vector2d to_goal = env.goal - puck;
    double d_goal = to_goal.norm();
    if (d_goal < 1e-9) return {0.0, 0.0};
    Eigen::Vector2d dir = to_goal / d_goal;
    double rc = spec.contact_radius;
    Eigen::Vector2d rel = puck - agent;
    double d_ap = rel.norm();
    double align = d_ap > 1e-9 ? rel.normalized().dot(dir) : 1.0;

    Eigen::Vector2d target;
    if (align > 0.85 && d_ap < 2.2 * rc) {
      // Behind the puck and close: nudge through it toward the goal.
      target = puck + 0.05 * dir;
    } else if (align < 0.3 && d_ap < 2.0 * rc) {
      // Wrong side and close: orbit around the puck toward its back.
      Eigen::Vector2d away = -rel / d_ap;
      Eigen::Vector2d t1(-away.y(), away.x());
      Eigen::Vector2d t2(away.y(), -away.x());
      Eigen::Vector2d behind = puck - 1.05 * rc * dir;
      Eigen::Vector2d t =
          ((behind - agent).dot(t1) > (behind - agent).dot(t2)) ? t1 : t2;
      target = puck + (1.9 * rc) * (away + 1.2 * t).normalized();
    } else {
      target = puck - 1.05 * rc * dir;  // staging point behind the puck
    }
    return clamp_box(kGain * (target - agent), -1.0, 1.0);
  }

  Eigen::Vector2d pos = env.s.head<2>();
  Eigen::Vector2d cmd = kGain * (env.goal - pos);
  return clamp_box(cmd, -1.0, 1.0);
}

}  // namespace diffplan
