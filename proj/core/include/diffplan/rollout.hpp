#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "diffplan/diffusion.hpp"
#include "diffplan/tasks.hpp"
#include "diffplan/types.hpp"

namespace diffplan {

// Maintains the T_o most recent (zero-padded) states; the first state is
// repeated while the episode is younger than the horizon.
class StateHistoryBuffer {
 public:
  StateHistoryBuffer(int obs_horizon, int state_dim);
  void push(const Vec& state);
  StateHistory history() const;
  void clear();

 private:
  int obs_horizon_;
  int state_dim_;
  std::deque<Vec> states_;
};

// A planner maps a state history to an H x A action sequence.
using PlannerFn = std::function<ActionSequence(const StateHistory&)>;

PlannerFn make_diffusion_planner(const DenoiserParams& params,
                                 const SamplerPlan& plan, RngStream* rng);

struct EpisodeStep {
  Vec state;  // state before the action
  Vec action;
  double reward = 0;
  bool success = false;
};

struct EpisodeResult {
  double episode_return = 0;
  bool success = false;
  int steps = 0;
  std::vector<EpisodeStep> trace;
};

// Greedy receding-horizon control: plan, execute the first exec_horizon
// actions, replan. Records the per-step trace when record_steps is true.
EpisodeResult run_episode(const TaskSpec& spec, uint64_t seed,
                          const PlannerFn& planner, int obs_horizon,
                          int planner_state_dim, int exec_horizon,
                          bool record_steps = false);

}  // namespace diffplan
