#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace diffplan {

enum class ScheduleKind { kCosine, kLinear };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind kind);

// Noise schedule for a K-step diffusion chain. Index convention: step k runs
// 1..K, k = 0 is noise-free data; arrays store step k at slot k-1.
struct NoiseSchedule {
  int K = 0;
  ScheduleKind kind = ScheduleKind::kCosine;
  std::vector<double> beta;           // variance increments, in (0,1)
  std::vector<double> alpha;          // 1 - beta
  std::vector<double> alpha_bar;      // running product of alpha, decreasing
  std::vector<double> sigma;          // sqrt(beta), ancestral noise scale
  std::vector<double> posterior_var;  // (1-a_k)(1-ab_{k-1})/(1-ab_k), ab_0 = 1

  double beta_at(int k) const { return beta[k - 1]; }
  double alpha_at(int k) const { return alpha[k - 1]; }
  double alpha_bar_at(int k) const { return k == 0 ? 1.0 : alpha_bar[k - 1]; }
  double sigma_at(int k) const { return sigma[k - 1]; }
  double posterior_var_at(int k) const { return posterior_var[k - 1]; }
};

// Builds a schedule and checks its invariants. For the cosine kind,
// abar_k = f(k)/f(0) with f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2), s = 0.008,
// and beta clamped to <= 0.999. The beta range applies to the linear kind only.
NoiseSchedule build_schedule(ScheduleKind kind, int K, double beta_start = 1e-4,
                             double beta_end = 0.02);

// One reverse transition of a sampler plan. The mean splits the incoming
// sample into a data prediction and a direction term:
//   x0_hat = (a_k - sqrt(1 - ab_cur) * eps_hat) / sqrt(ab_cur)
//   mean   = sqrt(ab_prev) * x0_hat + dir * eps_hat
// With clamp_x0 set, x0_hat is clamped to [-1, 1] before forming the mean,
// which keeps the chain on the action box when the predictor is imperfect.
struct PlanStep {
  int k = 0;                // diffusion index of the incoming sample
  int k_prev = 0;           // next index in the subsequence; 0 = data level
  double alpha_bar_cur = 1;
  double alpha_bar_prev = 1;
  double dir = 0;           // coefficient on eps_hat in the direction term
  double var = 0;           // isotropic transition variance
  bool clamp_x0 = false;

  // Affine view of the mean, valid while the x0 clamp is inactive:
  //   mean = mean_in_coeff() * a_k + mean_eps_coeff() * eps_hat
  double mean_in_coeff() const;
  double mean_eps_coeff() const;
};

struct SamplerPlan {
  std::vector<PlanStep> steps;  // ordered from k = K down to the final step
  int source_K = 0;             // K of the schedule the plan was built from
};

// Transition mean for one plan step. When jac_diag is non-null it receives
// the elementwise derivative of the mean with respect to eps_hat (the x0
// clamp zeroes the data-prediction path where it saturates).
Eigen::MatrixXd plan_step_mean(const PlanStep& step,
                               const Eigen::MatrixXd& a_in,
                               const Eigen::MatrixXd& eps_hat,
                               Eigen::MatrixXd* jac_diag = nullptr);

// Evenly spaced decreasing index subsequence of {1..K} of length `steps`,
// always containing K and 1, with per-step variance
//   sigma^2(eta) = eta^2 * (1-ab_prev)/(1-ab_cur) * (1 - ab_cur/ab_prev).
// With eta = 1 and steps = K the variances equal posterior_var elementwise.
SamplerPlan ddim_subsequence(const NoiseSchedule& schedule, int steps,
                             double eta, bool clamp_x0 = true);

// Full K-step plan with the sampling-equation mean and sigma_k = sqrt(beta_k).
// Never clamps the data prediction.
SamplerPlan ancestral_plan(const NoiseSchedule& schedule);

// Raises every transition variance to at least var_floor. Used when traces
// must support log-probability replay, where zero variance is degenerate.
SamplerPlan with_variance_floor(SamplerPlan plan, double var_floor);

}  // namespace diffplan
