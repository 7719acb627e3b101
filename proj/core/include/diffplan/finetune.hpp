#pragma once

#include <algorithm>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "diffplan/config.hpp"
#include "diffplan/denoiser.hpp"
#include "diffplan/diffusion.hpp"
#include "diffplan/rollout.hpp"
#include "diffplan/tasks.hpp"

namespace diffplan {

// One planning call worth of fine-tuning experience: the denoising chain
// that produced the executed actions plus the reward those actions earned.
struct RolloutSegment {
  StateHistory s_hist;   // planner conditioning at planning time
  DenoisingTrace trace;  // recorded with the exact plan used online
  double seg_reward = 0; // sum_i gamma^(i-1) * r_i over executed steps
  int env_t = 0;         // environment timestep at planning time
  int episode_id = 0;
};

enum class RegularizerKind { kBc, kNone, kKl, kPl };
RegularizerKind regularizer_from_string(const std::string& s);
std::string to_string(RegularizerKind kind);

struct FinetuneConfig {
  double clip_eps = 0.2;
  double lambda = 1.0;        // regularizer weight
  double gamma = 1.0;
  int exec_horizon = 8;       // T_a
  int ddim_steps = 10;
  double eta = 1.0;
  double sigma_floor = 0.05;  // per-step noise-scale floor for recorded plans
  int p_step = 10;            // gradient steps per collected episode
  int n_init = 10;            // proficient episodes seeding the buffers
  RegularizerKind regularizer = RegularizerKind::kBc;
  double lr = 1e-5;
  double lr_decay = 0.9999;   // per round, floored at lr_floor_frac * lr
  double lr_floor_frac = 0.1;
  int batch_size = 64;
  int target_capacity = 50;   // episodes
  int replay_capacity = 4096; // segments
  bool standardize_reward = true;
  long env_step_budget = 60000;
  int success_window = 50;

  static FinetuneConfig from_config(const Config& cfg);
  void validate() const;
};

// Trajectory-level store of proficient episodes approximating the target
// policy. Whole episodes only; eviction removes the lowest-scoring episode.
class TargetBuffer {
 public:
  explicit TargetBuffer(size_t capacity);

  struct Episode {
    std::vector<ConditionedSequence> records;  // (s_hist, a^0) per planning call
    double score = 0;                          // episode return at admission
  };

  void admit(Episode ep);
  bool empty() const { return episodes_.empty(); }
  size_t episode_count() const { return episodes_.size(); }
  size_t record_count() const { return record_count_; }
  const ConditionedSequence& sample_record(RngStream& rng) const;
  const std::vector<Episode>& episodes() const { return episodes_; }

 private:
  size_t capacity_;
  size_t record_count_ = 0;
  std::vector<Episode> episodes_;
};

// Monotone reward map fed to the clipped objective: optional running
// standardization clamped to [-5, 5], or raw pass-through.
struct RewardTransform {
  bool standardize = false;
  double mean = 0;
  double stddev = 1;

  double operator()(double r) const {
    if (!standardize) return r;
    double z = (r - mean) / (stddev > 1e-8 ? stddev : 1.0);
    return std::clamp(z, -5.0, 5.0);
  }
};

// Per-step clipped surrogate term, min(rho*rhat, clip(rho,1-eps,1+eps)*rhat).
// The loss is the negated batch mean of per-segment sums of this term.
inline double clipped_step_term(double rho, double rhat, double eps) {
  double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps);
  return std::min(rho * rhat, clipped * rhat);
}

// Probability ratio of one recorded transition under current vs snapshot
// parameters. The recorded a_out and variance are constants; only the means
// are re-evaluated. Zero recorded variance is invalid for fine-tuning.
double importance_ratio(const DenoiserParams& params,
                        const DenoiserParams& params_old, const TraceStep& step,
                        const StateHistory& s_hist);

struct PgLossStats {
  double mean_rho = 1;
  double clip_fraction = 0;  // share of steps with the ratio outside the band
};

// Clipped importance-sampled policy-gradient loss over recorded segments.
// Gradients flow through the reverse-step means only.
std::pair<double, GradientBundle> clipped_pg_loss(
    const DenoiserParams& params, const DenoiserParams& params_old,
    std::span<const RolloutSegment* const> batch, double clip_eps,
    const RewardTransform& transform, PgLossStats* stats = nullptr);

struct RegularizerInputs {
  std::span<const RolloutSegment* const> segments;  // kl and pl sources
  const TargetBuffer* target = nullptr;             // bc source
  const SamplerPlan* plan = nullptr;                // pl self-generation plan
  int batch_size = 64;
};

// Regularizer family: bc = denoising loss on target-buffer records,
// kl = closed-form Gaussian KL against the pre-trained reverse kernels,
// pl = denoising loss on freshly self-generated sequences, none = zero.
std::pair<double, GradientBundle> regularizer_loss(
    const DenoiserParams& params, const DenoiserParams& params_pre,
    RegularizerKind kind, const RegularizerInputs& in,
    const NoiseSchedule& schedule, RngStream& rng);

// sum_i gamma^(i-1) * rewards[i-1]
double discounted_sum(std::span<const double> rewards, double gamma);

// Samples one action sequence with a recorded trace, executes up to
// exec_horizon actions, accumulates the discounted segment reward and
// advances the environment and history.
RolloutSegment collect_segment(const DenoiserParams& params, EnvState& env,
                               StateHistoryBuffer& hist,
                               const SamplerPlan& plan, double gamma,
                               int exec_horizon, RngStream& rng);

// Reward sequence of the denoising MDP for one recorded trace: zero at every
// transition except the last, which pays the segment reward.
std::vector<double> denoising_mdp_rewards(const RolloutSegment& seg);

struct FinetuneSummary {
  double final_rolling_success = 0;
  double peak_rolling_success = 0;
  double max_drop_from_peak = 0;  // peak minus the lowest later rolling value
  int episodes = 0;
  long env_steps = 0;
  bool init_fallback = false;     // no proficient episode found within the cap
};

// Stage-2 loop for one task: seed buffers with proficient rollouts, then
// alternate episode collection with p_step clipped-PG + regularizer updates.
FinetuneSummary finetune_task(const Checkpoint& pretrained,
                              const TaskSpec& task, const FinetuneConfig& fcfg,
                              const std::string& ckpt_out,
                              const std::string& metrics_path, uint64_t seed);

}  // namespace diffplan
