#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "diffplan/diffusion.hpp"
#include "diffplan/rng.hpp"
#include "diffplan/tasks.hpp"
#include "diffplan/types.hpp"

namespace diffplan {

// One dataset transition. Rewards are stored for auditing but the training
// window sampler never exposes them.
struct TransitionRecord {
  int task_index = 0;
  int episode_id = 0;
  int t = 0;
  Vec s;
  Vec a;
  double r = 0;
  Vec s_next;
  bool done = false;
  bool success = false;
};

// A pre-training window: T_o rows of state history and H rows of actions,
// all from one episode, padded per the receding-horizon rules.
struct TrainingWindow {
  StateHistory s_hist;
  ActionSequence a_seq;
  int task_index = 0;
};

struct TaskSummary {
  std::string task_id;
  int episodes = 0;
  double success_rate = 0;
  double mean_return = 0;
};

// Offline multi-task dataset with an episode index for window sampling.
class Dataset {
 public:
  // Runs the scripted controller mixed with uniform noise on every task:
  //   a = (1 - noise_level) * a_ctrl + noise_level * u,  u ~ U[-1,1]^A
  static Dataset generate(const std::vector<TaskSpec>& suite,
                          int episodes_per_task, double noise_level,
                          uint64_t seed);

  // Binary file (header line + little-endian f64 records) plus a plain-text
  // manifest at path + ".manifest". See docs/formats.md.
  void save(const std::string& path) const;
  static Dataset load(const std::string& path);

  // Uniform over (episode, t); state history left-padded by repeating the
  // first state, action sequence right-padded by repeating the last action.
  TrainingWindow sample_window(int obs_horizon, int plan_horizon,
                               RngStream& rng) const;
  std::vector<TrainingWindow> sample_windows(int batch_size, int obs_horizon,
                                             int plan_horizon,
                                             RngStream& rng) const;

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  size_t size() const { return records_.size(); }
  size_t episode_count() const { return episodes_.size(); }
  const std::vector<std::string>& task_ids() const { return task_ids_; }
  const std::vector<TransitionRecord>& records() const { return records_; }
  const std::vector<TaskSummary>& summaries() const { return summaries_; }

 private:
  struct EpisodeSpan {
    size_t start = 0;
    size_t len = 0;
  };

  void rebuild_index();

  int state_dim_ = 0;
  int action_dim_ = 0;
  std::vector<std::string> task_ids_;
  std::vector<TransitionRecord> records_;
  std::vector<EpisodeSpan> episodes_;
  std::vector<TaskSummary> summaries_;
};

}  // namespace diffplan
