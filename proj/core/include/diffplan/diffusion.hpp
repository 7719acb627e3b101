#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "diffplan/denoiser.hpp"
#include "diffplan/rng.hpp"
#include "diffplan/schedule.hpp"
#include "diffplan/types.hpp"

namespace diffplan {

// One recorded reverse transition. a_out was drawn from Normal(mean, var*I);
// the plan step is kept verbatim so the transition density can be replayed
// under different parameters with exactly the sampler's mean map.
struct TraceStep {
  int k = 0;                  // diffusion index of a_in
  ActionSequence a_in;
  ActionSequence mean;
  double var = 0;
  ActionSequence a_out;
  PlanStep step;              // the plan step that produced this transition
  double logprob = 0;  // log density of a_out at sampling time (var > 0 only)
};

// Full denoising chain for one planning call, ordered K -> 0.
struct DenoisingTrace {
  std::vector<TraceStep> steps;
  ActionSequence final_action;  // a^0 after clamping to [-1, 1]
};

// Closed-form forward marginal: sqrt(ab_k) * a0 + sqrt(1 - ab_k) * eps.
ActionSequence forward_noise(const ActionSequence& a0, int k,
                             const ActionSequence& eps,
                             const NoiseSchedule& schedule);

// Deterministic mean of the ancestral reverse kernel:
//   (a_k - (1 - alpha_k)/sqrt(1 - abar_k) * eps_theta(a_k, s, k)) / sqrt(alpha_k)
ActionSequence reverse_step_mean(const DenoiserParams& params,
                                 const ActionSequence& a_k,
                                 const StateHistory& s_hist, int k,
                                 const NoiseSchedule& schedule);

// Sum over coordinates of -0.5 * ((x - mean)^2 / var + ln(2 pi var)).
double gaussian_logprob(const Mat& x, const Mat& mean, double var);

// Runs the reverse chain from unit Gaussian noise through the plan steps and
// clamps the final output to [-1, 1]. When `trace` is non-null the exact
// means/variances used are recorded (log-probs on the pre-clamp values).
ActionSequence sample_action_sequence(const DenoiserParams& params,
                                      const StateHistory& s_hist,
                                      const SamplerPlan& plan, RngStream& rng,
                                      DenoisingTrace* trace = nullptr);

// A state history paired with a noise-free action sequence; the unit both
// denoising losses train on.
struct ConditionedSequence {
  StateHistory s_hist;
  ActionSequence a0;
};

// Denoising objective on a batch: per element draws k ~ Uniform{1..K} and
// eps ~ N(0, I), noises a0 to level k, and regresses the prediction onto eps.
// Both the pre-train loss and the behavior-clone surrogate are this function.
std::pair<double, GradientBundle> denoise_loss_batch(
    const DenoiserParams& params, std::span<const ConditionedSequence> batch,
    const NoiseSchedule& schedule, RngStream& rng);

// Pre-training objective over dataset windows. Errors on an empty batch.
std::pair<double, GradientBundle> pretrain_loss_batch(
    const DenoiserParams& params, std::span<const ConditionedSequence> batch,
    const NoiseSchedule& schedule, RngStream& rng);

// Behavior-clone surrogate over target-buffer records. Distinct entry point
// so an empty target buffer maps to UnavailableError at the call site.
std::pair<double, GradientBundle> bc_loss_batch(
    const DenoiserParams& params, std::span<const ConditionedSequence> batch,
    const NoiseSchedule& schedule, RngStream& rng);

// Draws an H x A matrix of unit normals.
Mat normal_matrix(int rows, int cols, RngStream& rng);

}  // namespace diffplan
