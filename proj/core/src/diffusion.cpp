#include "diffplan/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "diffplan/errors.hpp"

namespace diffplan {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

Mat normal_matrix(int rows, int cols, RngStream& rng) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.normal();
  return m;
}

ActionSequence forward_noise(const ActionSequence& a0, int k,
                             const ActionSequence& eps,
                             const NoiseSchedule& schedule) {
  if (k < 1 || k > schedule.K)
    throw std::invalid_argument("forward_noise: k out of [1, K]");
  if (eps.rows() != a0.rows() || eps.cols() != a0.cols())
    throw std::invalid_argument("forward_noise: eps shape mismatch");
  double ab = schedule.alpha_bar_at(k);
  return std::sqrt(ab) * a0 + std::sqrt(1.0 - ab) * eps;
}

ActionSequence reverse_step_mean(const DenoiserParams& params,
                                 const ActionSequence& a_k,
                                 const StateHistory& s_hist, int k,
                                 const NoiseSchedule& schedule) {
  if (k < 1 || k > schedule.K)
    throw std::invalid_argument("reverse_step_mean: k out of [1, K]");
  double a = schedule.alpha_at(k);
  double ab = schedule.alpha_bar_at(k);
  ActionSequence eps_hat = predict_noise(params, a_k, s_hist, k);
  return (a_k - ((1.0 - a) / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(a);
}

double gaussian_logprob(const Mat& x, const Mat& mean, double var) {
  if (var <= 0.0)
    throw std::invalid_argument("gaussian_logprob: var must be > 0");
  if (x.rows() != mean.rows() || x.cols() != mean.cols())
    throw std::invalid_argument("gaussian_logprob: shape mismatch");
  double d = static_cast<double>(x.size());
  double sq = (x - mean).squaredNorm();
  return -0.5 * (sq / var + d * (kLog2Pi + std::log(var)));
}

ActionSequence sample_action_sequence(const DenoiserParams& params,
                                      const StateHistory& s_hist,
                                      const SamplerPlan& plan, RngStream& rng,
                                      DenoisingTrace* trace) {
  const NetConfig& cfg = params.cfg;
  if (plan.steps.empty())
    throw std::invalid_argument("sample_action_sequence: empty plan");

  ActionSequence a = normal_matrix(cfg.plan_horizon, cfg.action_dim, rng);
  if (trace) {
    trace->steps.clear();
    trace->steps.reserve(plan.steps.size());
  }

  for (const PlanStep& ps : plan.steps) {
    ActionSequence eps_hat = predict_noise(params, a, s_hist, ps.k);
    ActionSequence mean = plan_step_mean(ps, a, eps_hat);
    ActionSequence next = mean;
    if (ps.var > 0.0)
      next += std::sqrt(ps.var) *
              normal_matrix(cfg.plan_horizon, cfg.action_dim, rng);

    if (trace) {
      TraceStep ts;
      ts.k = ps.k;
      ts.a_in = a;
      ts.mean = mean;
      ts.var = ps.var;
      ts.a_out = next;
      ts.step = ps;
      ts.logprob = ps.var > 0.0 ? gaussian_logprob(next, mean, ps.var) : 0.0;
      trace->steps.push_back(std::move(ts));
    }
    a = std::move(next);
  }

  ActionSequence clamped = a.cwiseMax(-1.0).cwiseMin(1.0);
  if (trace) trace->final_action = clamped;
  return clamped;
}

std::pair<double, GradientBundle> denoise_loss_batch(
    const DenoiserParams& params, std::span<const ConditionedSequence> batch,
    const NoiseSchedule& schedule, RngStream& rng) {
  if (batch.empty())
    throw std::invalid_argument("denoise_loss_batch: empty batch");

  const NetConfig& cfg = params.cfg;
  Mat inputs(batch.size(), cfg.input_dim());
  Mat targets(batch.size(), cfg.output_dim());
  for (size_t b = 0; b < batch.size(); ++b) {
    int k = static_cast<int>(rng.index(static_cast<size_t>(schedule.K))) + 1;
    Mat eps = normal_matrix(cfg.plan_horizon, cfg.action_dim, rng);
    ActionSequence a_k = forward_noise(batch[b].a0, k, eps, schedule);
    inputs.row(b) = pack_input(cfg, a_k, batch[b].s_hist, k);
    int pos = 0;
    for (int r = 0; r < eps.rows(); ++r)
      for (int c = 0; c < eps.cols(); ++c) targets(b, pos++) = eps(r, c);
  }
  return loss_and_grad_rows(params, inputs, targets);
}

std::pair<double, GradientBundle> pretrain_loss_batch(
    const DenoiserParams& params, std::span<const ConditionedSequence> batch,
    const NoiseSchedule& schedule, RngStream& rng) {
  if (batch.empty())
    throw std::invalid_argument("pretrain_loss_batch: empty batch");
  return denoise_loss_batch(params, batch, schedule, rng);
}

std::pair<double, GradientBundle> bc_loss_batch(
    const DenoiserParams& params, std::span<const ConditionedSequence> batch,
    const NoiseSchedule& schedule, RngStream& rng) {
  if (batch.empty())
    throw UnavailableError("bc_loss_batch: target buffer is empty");
  return denoise_loss_batch(params, batch, schedule, rng);
}

}  // namespace diffplan
