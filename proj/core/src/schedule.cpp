#include "diffplan/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace diffplan {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kCosineOffset = 0.008;
constexpr double kBetaClamp = 0.999;

void check_invariants(const NoiseSchedule& s) {
  double prev_bar = 1.0;
  for (int k = 1; k <= s.K; ++k) {
    double b = s.beta_at(k);
    if (!(b > 0.0 && b < 1.0))
      throw std::invalid_argument("schedule: beta out of (0,1) at k=" +
                                  std::to_string(k));
    if (!(s.alpha_bar_at(k) < prev_bar))
      throw std::invalid_argument("schedule: alpha_bar not decreasing at k=" +
                                  std::to_string(k));
    double recon = prev_bar * s.alpha_at(k);
    if (std::abs(recon - s.alpha_bar_at(k)) > 1e-12)
      throw std::invalid_argument("schedule: alpha_bar product broken at k=" +
                                  std::to_string(k));
    if (s.posterior_var_at(k) > b)
      throw std::invalid_argument("schedule: posterior_var > beta at k=" +
                                  std::to_string(k));
    prev_bar = s.alpha_bar_at(k);
  }
}

}  // namespace

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "cosine") return ScheduleKind::kCosine;
  if (s == "linear") return ScheduleKind::kLinear;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind kind) {
  return kind == ScheduleKind::kCosine ? "cosine" : "linear";
}

NoiseSchedule build_schedule(ScheduleKind kind, int K, double beta_start,
                             double beta_end) {
  if (K < 1) throw std::invalid_argument("build_schedule: K must be >= 1");

  NoiseSchedule s;
  s.K = K;
  s.kind = kind;
  s.beta.resize(K);

  if (kind == ScheduleKind::kCosine) {
    auto f = [&](double k) {
      double c = std::cos(((k / K + kCosineOffset) / (1.0 + kCosineOffset)) *
                          kPi / 2.0);
      return c * c;
    };
    double f0 = f(0.0);
    double prev = 1.0;
    for (int k = 1; k <= K; ++k) {
      double bar = f(static_cast<double>(k)) / f0;
      s.beta[k - 1] = std::min(1.0 - bar / prev, kBetaClamp);
      prev = bar;
    }
  } else {
    if (!(beta_start > 0.0 && beta_start < 1.0 && beta_end > 0.0 &&
          beta_end < 1.0))
      throw std::invalid_argument("build_schedule: beta range out of (0,1)");
    for (int k = 1; k <= K; ++k) {
      double t = K == 1 ? 0.0 : static_cast<double>(k - 1) / (K - 1);
      s.beta[k - 1] = beta_start + (beta_end - beta_start) * t;
    }
  }

  s.alpha.resize(K);
  s.alpha_bar.resize(K);
  s.sigma.resize(K);
  s.posterior_var.resize(K);
  double bar = 1.0;
  for (int k = 1; k <= K; ++k) {
    double b = s.beta[k - 1];
    double a = 1.0 - b;
    double bar_prev = bar;
    bar *= a;
    s.alpha[k - 1] = a;
    s.alpha_bar[k - 1] = bar;
    s.sigma[k - 1] = std::sqrt(b);
    s.posterior_var[k - 1] = (1.0 - bar_prev) / (1.0 - bar) * b;
  }

  check_invariants(s);
  return s;
}

double PlanStep::mean_in_coeff() const {
  return std::sqrt(alpha_bar_prev) / std::sqrt(alpha_bar_cur);
}

double PlanStep::mean_eps_coeff() const {
  return dir - std::sqrt(alpha_bar_prev) * std::sqrt(1.0 - alpha_bar_cur) /
                   std::sqrt(alpha_bar_cur);
}

Eigen::MatrixXd plan_step_mean(const PlanStep& step,
                               const Eigen::MatrixXd& a_in,
                               const Eigen::MatrixXd& eps_hat,
                               Eigen::MatrixXd* jac_diag) {
  double sab_c = std::sqrt(step.alpha_bar_cur);
  double sab_p = std::sqrt(step.alpha_bar_prev);
  double s1mc = std::sqrt(1.0 - step.alpha_bar_cur);

  Eigen::MatrixXd x0 = (a_in - s1mc * eps_hat) / sab_c;
  if (jac_diag) {
    jac_diag->resize(a_in.rows(), a_in.cols());
    jac_diag->setConstant(step.dir - sab_p * s1mc / sab_c);
  }
  if (step.clamp_x0) {
    if (jac_diag) {
      // Saturated coordinates lose the data-prediction path.
      for (int r = 0; r < x0.rows(); ++r)
        for (int c = 0; c < x0.cols(); ++c)
          if (x0(r, c) <= -1.0 || x0(r, c) >= 1.0)
            (*jac_diag)(r, c) = step.dir;
    }
    x0 = x0.cwiseMax(-1.0).cwiseMin(1.0);
  }
  return sab_p * x0 + step.dir * eps_hat;
}

SamplerPlan ddim_subsequence(const NoiseSchedule& schedule, int steps,
                             double eta, bool clamp_x0) {
  int K = schedule.K;
  if (steps < 1 || steps > K)
    throw std::invalid_argument("ddim_subsequence: steps must be in [1, K]");

  // Uniform stride through {1..K}, endpoints pinned to K and 1.
  std::vector<int> idx(steps);
  for (int i = 0; i < steps; ++i) {
    idx[i] = steps == 1
                 ? K
                 : K - static_cast<int>(
                           (static_cast<long long>(i) * (K - 1)) / (steps - 1));
  }

  SamplerPlan plan;
  plan.source_K = K;
  plan.steps.reserve(steps);
  for (int i = 0; i < steps; ++i) {
    int cur = idx[i];
    int prev = (i + 1 < steps) ? idx[i + 1] : 0;
    double ab_c = schedule.alpha_bar_at(cur);
    double ab_p = schedule.alpha_bar_at(prev);

    // 1 - ab_cur/ab_prev equals beta_cur when the stride is one; using beta
    // keeps the unit-stride variance bitwise equal to posterior_var.
    double ratio_term = (prev == cur - 1)
                            ? schedule.beta_at(cur)
                            : 1.0 - ab_c / ab_p;
    double var = eta * eta * ((1.0 - ab_p) / (1.0 - ab_c)) * ratio_term;

    PlanStep step;
    step.k = cur;
    step.k_prev = prev;
    step.alpha_bar_cur = ab_c;
    step.alpha_bar_prev = ab_p;
    step.dir = std::sqrt(std::max(0.0, 1.0 - ab_p - var));
    step.var = var;
    step.clamp_x0 = clamp_x0;
    plan.steps.push_back(step);
  }
  return plan;
}

SamplerPlan ancestral_plan(const NoiseSchedule& schedule) {
  SamplerPlan plan;
  plan.source_K = schedule.K;
  plan.steps.reserve(schedule.K);
  for (int k = schedule.K; k >= 1; --k) {
    // Mean geometry is the posterior mean regardless of the sqrt(beta)
    // noise-scale choice, so dir derives from the posterior variance.
    PlanStep step;
    step.k = k;
    step.k_prev = k - 1;
    step.alpha_bar_cur = schedule.alpha_bar_at(k);
    step.alpha_bar_prev = schedule.alpha_bar_at(k - 1);
    step.dir = std::sqrt(std::max(
        0.0, 1.0 - step.alpha_bar_prev - schedule.posterior_var_at(k)));
    step.var = schedule.beta_at(k);
    step.clamp_x0 = false;
    plan.steps.push_back(step);
  }
  return plan;
}

SamplerPlan with_variance_floor(SamplerPlan plan, double var_floor) {
  if (var_floor < 0.0)
    throw std::invalid_argument("with_variance_floor: negative floor");
  for (auto& step : plan.steps) step.var = std::max(step.var, var_floor);
  return plan;
}

}  // namespace diffplan
