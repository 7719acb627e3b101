#pragma once

#include <string>
#include <vector>

#include "diffplan/denoiser.hpp"
#include "diffplan/rollout.hpp"
#include "diffplan/tasks.hpp"

namespace diffplan {

struct EpisodeRecord {
  double episode_return = 0;
  bool success = false;
};

struct EvalResult {
  double success_rate = 0;
  double mean_return = 0;
  std::vector<EpisodeRecord> episodes;
};

struct EvalOptions {
  int episodes = 50;
  int exec_horizon = 8;   // T_a
  int ddim_steps = 10;
  double eta = 1.0;
  double sigma_floor = 0.05;
};

// Receding-horizon evaluation of a planner checkpoint on one task.
// Deterministic given seed; never mutates the checkpoint.
EvalResult evaluate(const Checkpoint& ckpt, const TaskSpec& task,
                    const EvalOptions& opts, uint64_t seed);

// Success rate of uniform-random actions; the floor any planner must beat.
EvalResult evaluate_random_policy(const TaskSpec& task, int episodes,
                                  uint64_t seed);

// Evaluation with an arbitrary planner (used to wrap scripted oracles).
EvalResult evaluate_planner(const TaskSpec& task, const PlannerFn& planner,
                            int episodes, int obs_horizon,
                            int planner_state_dim, int exec_horizon,
                            uint64_t seed);

// Dumps n planner episodes as CSV rows (episode, t, state..., action...,
// reward, success).
void export_trajectories(const Checkpoint& ckpt, const TaskSpec& task,
                         int n_episodes, const EvalOptions& opts,
                         uint64_t seed, const std::string& path);

// Aggregates fine-tuning metrics CSVs into a plain-text table: one detail
// row per input file plus a per-(task, regularizer) summary across seeds.
void ablation_report(const std::vector<std::string>& metric_csvs,
                     const std::string& out_path);

}  // namespace diffplan
