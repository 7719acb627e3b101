#include "diffplan/finetune.hpp"

#include <cmath>
#include <deque>
#include <stdexcept>

#include "diffplan/errors.hpp"
#include "diffplan/metrics.hpp"

namespace diffplan {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kLogRatioClamp = 30.0;

double row_logprob(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                   const Eigen::Ref<const Eigen::RowVectorXd>& mean,
                   double var) {
  double d = static_cast<double>(x.size());
  double sq = (x - mean).squaredNorm();
  return -0.5 * (sq / var + d * (kLog2Pi + std::log(var)));
}

Eigen::RowVectorXd flatten_row(const Mat& m) {
  Eigen::RowVectorXd out(m.size());
  int pos = 0;
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out[pos++] = m(r, c);
  return out;
}

// 90th percentile by nearest-rank.
double quantile90(const std::deque<double>& values) {
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  size_t idx = static_cast<size_t>(std::ceil(0.9 * v.size()));
  idx = idx == 0 ? 0 : idx - 1;
  return v[std::min(idx, v.size() - 1)];
}

}  // namespace

RegularizerKind regularizer_from_string(const std::string& s) {
  if (s == "bc") return RegularizerKind::kBc;
  if (s == "none") return RegularizerKind::kNone;
  if (s == "kl") return RegularizerKind::kKl;
  if (s == "pl") return RegularizerKind::kPl;
  throw std::invalid_argument("unknown regularizer kind: " + s);
}

std::string to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::kBc: return "bc";
    case RegularizerKind::kNone: return "none";
    case RegularizerKind::kKl: return "kl";
    case RegularizerKind::kPl: return "pl";
  }
  return "?";
}

FinetuneConfig FinetuneConfig::from_config(const Config& cfg) {
  FinetuneConfig f;
  f.clip_eps = cfg.get_double("finetune.clip_eps");
  f.lambda = cfg.get_double("finetune.lambda");
  f.gamma = cfg.get_double("finetune.gamma");
  f.exec_horizon = cfg.get_int("finetune.exec_horizon");
  f.ddim_steps = cfg.get_int("finetune.ddim_steps");
  f.eta = cfg.get_double("finetune.eta");
  f.sigma_floor = cfg.get_double("finetune.sigma_floor");
  f.p_step = cfg.get_int("finetune.p_step");
  f.n_init = cfg.get_int("finetune.n_init");
  f.regularizer = regularizer_from_string(cfg.get_string("finetune.regularizer"));
  f.lr = cfg.get_double("finetune.lr");
  f.lr_decay = cfg.get_double("finetune.lr_decay");
  f.lr_floor_frac = cfg.get_double("finetune.lr_floor_frac");
  f.batch_size = cfg.get_int("finetune.batch_size");
  f.target_capacity = cfg.get_int("finetune.target_capacity");
  f.replay_capacity = cfg.get_int("finetune.replay_capacity");
  f.standardize_reward =
      cfg.get_string("finetune.reward_transform") == "standardize";
  f.env_step_budget = cfg.get_int("finetune.env_steps");
  f.success_window = cfg.get_int("finetune.success_window");
  return f;
}

void FinetuneConfig::validate() const {
  if (!(clip_eps > 0)) throw std::invalid_argument("finetune: clip_eps must be > 0");
  if (lambda < 0) throw std::invalid_argument("finetune: lambda must be >= 0");
  if (!(gamma > 0 && gamma <= 1))
    throw std::invalid_argument("finetune: gamma must be in (0, 1]");
  if (exec_horizon < 1) throw std::invalid_argument("finetune: exec_horizon >= 1");
  if (p_step < 1) throw std::invalid_argument("finetune: p_step >= 1");
  if (n_init < 1) throw std::invalid_argument("finetune: n_init >= 1");
  if (!(lr > 0)) throw std::invalid_argument("finetune: lr must be > 0");
  if (batch_size < 1) throw std::invalid_argument("finetune: batch_size >= 1");
}

TargetBuffer::TargetBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1)
    throw std::invalid_argument("target buffer: capacity must be >= 1");
}

void TargetBuffer::admit(Episode ep) {
  if (ep.records.empty())
    throw std::invalid_argument("target buffer: empty episode");
  record_count_ += ep.records.size();
  episodes_.push_back(std::move(ep));
  if (episodes_.size() > capacity_) {
    size_t lowest = 0;
    for (size_t i = 1; i < episodes_.size(); ++i)
      if (episodes_[i].score < episodes_[lowest].score) lowest = i;
    record_count_ -= episodes_[lowest].records.size();
    episodes_.erase(episodes_.begin() + lowest);
  }
}

const ConditionedSequence& TargetBuffer::sample_record(RngStream& rng) const {
  if (empty()) throw UnavailableError("target buffer: empty");
  size_t flat = rng.index(record_count_);
  for (const auto& ep : episodes_) {
    if (flat < ep.records.size()) return ep.records[flat];
    flat -= ep.records.size();
  }
  return episodes_.back().records.back();  // unreachable
}

double importance_ratio(const DenoiserParams& params,
                        const DenoiserParams& params_old, const TraceStep& step,
                        const StateHistory& s_hist) {
  if (step.var <= 0.0)
    throw std::invalid_argument(
        "importance_ratio: zero-variance trace step is invalid for "
        "fine-tuning (deterministic plan)");

  ActionSequence eps_new = predict_noise(params, step.a_in, s_hist, step.k);
  ActionSequence eps_old = predict_noise(params_old, step.a_in, s_hist, step.k);
  ActionSequence mean_new = plan_step_mean(step.step, step.a_in, eps_new);
  ActionSequence mean_old = plan_step_mean(step.step, step.a_in, eps_old);
  double lp_new = gaussian_logprob(step.a_out, mean_new, step.var);
  double lp_old = gaussian_logprob(step.a_out, mean_old, step.var);
  return std::exp(std::clamp(lp_new - lp_old, -kLogRatioClamp, kLogRatioClamp));
}

std::pair<double, GradientBundle> clipped_pg_loss(
    const DenoiserParams& params, const DenoiserParams& params_old,
    std::span<const RolloutSegment* const> batch, double clip_eps,
    const RewardTransform& transform, PgLossStats* stats) {
  if (batch.empty())
    throw std::invalid_argument("clipped_pg_loss: empty batch");
  if (!(clip_eps > 0))
    throw std::invalid_argument("clipped_pg_loss: clip_eps must be > 0");

  const NetConfig& cfg = params.cfg;
  const int D = cfg.output_dim();

  size_t rows = 0;
  for (const RolloutSegment* seg : batch) {
    if (seg->trace.steps.empty())
      throw std::invalid_argument("clipped_pg_loss: segment without trace");
    for (const TraceStep& ts : seg->trace.steps)
      if (ts.var <= 0.0)
        throw std::invalid_argument(
            "clipped_pg_loss: zero-variance trace step in batch");
    rows += seg->trace.steps.size();
  }

  Mat inputs(rows, cfg.input_dim());
  size_t r = 0;
  for (const RolloutSegment* seg : batch)
    for (const TraceStep& ts : seg->trace.steps)
      inputs.row(r++) = pack_input(cfg, ts.a_in, seg->s_hist, ts.k);

  ForwardCache cache;
  Mat eps_new = forward(params, inputs, &cache);
  Mat eps_old = forward(params_old, inputs);

  double batch_n = static_cast<double>(batch.size());
  Mat d_output = Mat::Zero(rows, D);
  double loss = 0.0;
  double rho_sum = 0.0;
  size_t clipped_count = 0;

  r = 0;
  for (const RolloutSegment* seg : batch) {
    double rhat = transform(seg->seg_reward);
    for (const TraceStep& ts : seg->trace.steps) {
      Mat a_in = inputs.row(r).head(D);
      Mat a_out = flatten_row(ts.a_out);
      Mat jac;
      Mat mean_new = plan_step_mean(ts.step, a_in, eps_new.row(r), &jac);
      Mat mean_old = plan_step_mean(ts.step, a_in, eps_old.row(r));
      double lp_new = row_logprob(a_out, mean_new, ts.var);
      double lp_old = row_logprob(a_out, mean_old, ts.var);
      double rho = std::exp(
          std::clamp(lp_new - lp_old, -kLogRatioClamp, kLogRatioClamp));

      double u = rho * rhat;
      double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps) * rhat;
      loss -= std::min(u, clipped);

      // Gradient flows through the unclipped branch only; ties inside the
      // band are the same function on both branches.
      if (u <= clipped) {
        double d_rho = -rhat / batch_n;
        d_output.row(r) = (d_rho * rho / ts.var) *
                          (a_out - mean_new).cwiseProduct(jac);
      }
      rho_sum += rho;
      if (rho < 1.0 - clip_eps || rho > 1.0 + clip_eps) ++clipped_count;
      ++r;
    }
  }
  loss /= batch_n;

  if (stats) {
    stats->mean_rho = rho_sum / static_cast<double>(rows);
    stats->clip_fraction =
        static_cast<double>(clipped_count) / static_cast<double>(rows);
  }
  return {loss, backward(params, cache, d_output)};
}

namespace {

std::pair<double, GradientBundle> kl_regularizer(
    const DenoiserParams& params, const DenoiserParams& params_pre,
    std::span<const RolloutSegment* const> segments) {
  if (segments.empty())
    throw std::invalid_argument("kl regularizer: no segments");

  const NetConfig& cfg = params.cfg;
  const int D = cfg.output_dim();
  size_t rows = 0;
  for (const RolloutSegment* seg : segments) rows += seg->trace.steps.size();

  Mat inputs(rows, cfg.input_dim());
  size_t r = 0;
  for (const RolloutSegment* seg : segments)
    for (const TraceStep& ts : seg->trace.steps)
      inputs.row(r++) = pack_input(cfg, ts.a_in, seg->s_hist, ts.k);

  ForwardCache cache;
  Mat eps_new = forward(params, inputs, &cache);
  Mat eps_pre = forward(params_pre, inputs);

  double batch_n = static_cast<double>(segments.size());
  Mat d_output = Mat::Zero(rows, D);
  double loss = 0.0;
  r = 0;
  for (const RolloutSegment* seg : segments) {
    for (const TraceStep& ts : seg->trace.steps) {
      if (ts.var <= 0.0)
        throw std::invalid_argument("kl regularizer: zero-variance step");
      // KL between Gaussians sharing the recorded variance:
      //   ||mean_theta - mean_pre||^2 / (2 var)
      Mat a_in = inputs.row(r).head(D);
      Mat jac;
      Mat mean_new = plan_step_mean(ts.step, a_in, eps_new.row(r), &jac);
      Mat mean_pre = plan_step_mean(ts.step, a_in, eps_pre.row(r));
      Mat diff = mean_new - mean_pre;
      loss += diff.squaredNorm() / (2.0 * ts.var) / batch_n;
      d_output.row(r) = (1.0 / ts.var / batch_n) * diff.cwiseProduct(jac);
      ++r;
    }
  }
  return {loss, backward(params, cache, d_output)};
}

}  // namespace

std::pair<double, GradientBundle> regularizer_loss(
    const DenoiserParams& params, const DenoiserParams& params_pre,
    RegularizerKind kind, const RegularizerInputs& in,
    const NoiseSchedule& schedule, RngStream& rng) {
  switch (kind) {
    case RegularizerKind::kNone:
      return {0.0, GradientBundle::zeros_like(params)};

    case RegularizerKind::kBc: {
      if (!in.target || in.target->empty())
        throw UnavailableError("regularizer_loss: bc requires a non-empty "
                               "target buffer; seed it first");
      std::vector<ConditionedSequence> batch;
      batch.reserve(in.batch_size);
      for (int i = 0; i < in.batch_size; ++i)
        batch.push_back(in.target->sample_record(rng));
      return bc_loss_batch(params, batch, schedule, rng);
    }

    case RegularizerKind::kKl:
      return kl_regularizer(params, params_pre, in.segments);

    case RegularizerKind::kPl: {
      if (in.segments.empty() || !in.plan)
        throw std::invalid_argument("regularizer_loss: pl needs segments and a plan");
      size_t n = std::min<size_t>(in.batch_size, in.segments.size());
      std::vector<ConditionedSequence> batch;
      batch.reserve(n);
      for (size_t i = 0; i < n; ++i) {
        const RolloutSegment* seg = in.segments[i];
        // Self-generated sample under the current parameters; the generation
        // path is treated as data, gradients flow through the denoising loss.
        ActionSequence a0 =
            sample_action_sequence(params, seg->s_hist, *in.plan, rng);
        batch.push_back({seg->s_hist, std::move(a0)});
      }
      return denoise_loss_batch(params, batch, schedule, rng);
    }
  }
  throw std::logic_error("regularizer_loss: unhandled kind");
}

double discounted_sum(std::span<const double> rewards, double gamma) {
  double sum = 0.0;
  double discount = 1.0;
  for (double r : rewards) {
    sum += discount * r;
    discount *= gamma;
  }
  return sum;
}

RolloutSegment collect_segment(const DenoiserParams& params, EnvState& env,
                               StateHistoryBuffer& hist,
                               const SamplerPlan& plan, double gamma,
                               int exec_horizon, RngStream& rng) {
  if (env.done) throw ContractViolation("collect_segment: episode finished");

  RolloutSegment seg;
  seg.env_t = env.t;
  seg.s_hist = hist.history();

  DenoisingTrace trace;
  ActionSequence a0 = sample_action_sequence(params, seg.s_hist, plan, rng, &trace);
  seg.trace = std::move(trace);

  std::vector<double> rewards;
  rewards.reserve(exec_horizon);
  for (int i = 0; i < exec_horizon && !env.done; ++i) {
    Eigen::Vector2d a = a0.row(i).head<2>();
    StepResult res = step(env, a);
    hist.push(env.s);
    rewards.push_back(res.reward);
  }
  seg.seg_reward = discounted_sum(rewards, gamma);
  return seg;
}

std::vector<double> denoising_mdp_rewards(const RolloutSegment& seg) {
  std::vector<double> rewards(seg.trace.steps.size(), 0.0);
  if (!rewards.empty()) rewards.back() = seg.seg_reward;
  return rewards;
}

namespace {

struct CollectedEpisode {
  std::vector<RolloutSegment> segments;
  double episode_return = 0;
  bool success = false;
  int steps = 0;
};

CollectedEpisode collect_episode(const DenoiserParams& params,
                                 const TaskSpec& task, uint64_t env_seed,
                                 const SamplerPlan& plan,
                                 const FinetuneConfig& fcfg, int episode_id,
                                 RngStream& rng) {
  CollectedEpisode out;
  EnvState env = reset(task, env_seed);
  StateHistoryBuffer hist(params.cfg.obs_horizon, params.cfg.state_dim);
  hist.push(env.s);
  int prev_t = 0;
  double undiscounted = 0.0;
  while (!env.done) {
    RolloutSegment seg = collect_segment(params, env, hist, plan, fcfg.gamma,
                                         fcfg.exec_horizon, rng);
    seg.episode_id = episode_id;
    out.steps += env.t - prev_t;
    prev_t = env.t;
    out.segments.push_back(std::move(seg));
  }
  // Episode return reported undiscounted within segments at gamma = 1; for
  // gamma < 1 the segment rewards are already discounted per planning call.
  for (const auto& seg : out.segments) undiscounted += seg.seg_reward;
  out.episode_return = undiscounted;
  out.success = env.success;
  return out;
}

TargetBuffer::Episode to_target_episode(const CollectedEpisode& ep) {
  TargetBuffer::Episode out;
  out.records.reserve(ep.segments.size());
  for (const auto& seg : ep.segments)
    out.records.push_back({seg.s_hist, seg.trace.final_action});
  out.score = ep.episode_return;
  return out;
}

}  // namespace

FinetuneSummary finetune_task(const Checkpoint& pretrained,
                              const TaskSpec& task, const FinetuneConfig& fcfg,
                              const std::string& ckpt_out,
                              const std::string& metrics_path, uint64_t seed) {
  fcfg.validate();
  if (task.state_dim > pretrained.params.cfg.state_dim)
    throw std::invalid_argument("finetune: task state_dim exceeds checkpoint");
  if (task.action_dim != pretrained.params.cfg.action_dim)
    throw std::invalid_argument("finetune: task action_dim mismatch");
  if (fcfg.exec_horizon > pretrained.params.cfg.plan_horizon)
    throw std::invalid_argument("finetune: exec_horizon exceeds plan horizon");

  NoiseSchedule schedule = build_schedule(pretrained.schedule, pretrained.K);
  if (fcfg.ddim_steps < 1 || fcfg.ddim_steps > schedule.K)
    throw std::invalid_argument("finetune: ddim_steps out of [1, K]");
  SamplerPlan plan = with_variance_floor(
      ddim_subsequence(schedule, fcfg.ddim_steps, fcfg.eta),
      fcfg.sigma_floor * fcfg.sigma_floor);

  DenoiserParams params = pretrained.params;
  const DenoiserParams& params_pre = pretrained.params;
  AdamState adam = AdamState::zeros_like(params);
  double lr = fcfg.lr;
  const double lr_floor = fcfg.lr * fcfg.lr_floor_frac;

  RngStream master(seed);
  RngStream sample_rng = master.split(1);
  RngStream batch_rng = master.split(2);
  RngStream reg_rng = master.split(3);

  TargetBuffer target(fcfg.target_capacity);
  std::vector<RolloutSegment> replay;
  RunningStat reward_stat;
  RollingMean rolling_success(fcfg.success_window);
  std::deque<double> recent_returns;

  CsvWriter csv(metrics_path,
                {"episode", "env_steps", "mean_seg_reward", "episode_return",
                 "rolling_success", "loss_imp", "loss_reg", "mean_rho",
                 "clip_fraction"},
                "stage=finetune task=" + task.task_id +
                    " regularizer=" + to_string(fcfg.regularizer) +
                    " seed=" + std::to_string(seed));

  FinetuneSummary summary;
  long env_steps = 0;
  int episode_id = 0;

  auto is_proficient = [&](const CollectedEpisode& ep) {
    if (ep.success) return true;
    if (recent_returns.size() >= 10)
      return ep.episode_return >= quantile90(recent_returns);
    return false;
  };

  auto note_episode = [&](const CollectedEpisode& ep) {
    for (const auto& seg : ep.segments) reward_stat.push(seg.seg_reward);
    recent_returns.push_back(ep.episode_return);
    while (recent_returns.size() > 100) recent_returns.pop_front();
    rolling_success.push(ep.success ? 1.0 : 0.0);
    env_steps += ep.steps;
  };

  auto mean_seg_reward = [](const CollectedEpisode& ep) {
    double s = 0;
    for (const auto& seg : ep.segments) s += seg.seg_reward;
    return ep.segments.empty() ? 0.0 : s / ep.segments.size();
  };

  auto write_row = [&](const CollectedEpisode& ep, const std::string& l_imp,
                       const std::string& l_reg, const std::string& rho,
                       const std::string& clip) {
    csv.write_row({std::to_string(episode_id), std::to_string(env_steps),
                   format_double(mean_seg_reward(ep)),
                   format_double(ep.episode_return),
                   format_double(rolling_success.mean()), l_imp, l_reg, rho,
                   clip});
  };

  // Buffer initialization: roll out with the pre-trained planner until
  // n_init proficient episodes are admitted, capped at 20x attempts.
  const int max_attempts = 20 * fcfg.n_init;
  std::vector<CollectedEpisode> init_episodes;
  int admitted = 0;
  for (int attempt = 0;
       attempt < max_attempts && admitted < fcfg.n_init &&
       env_steps < fcfg.env_step_budget;
       ++attempt) {
    CollectedEpisode ep = collect_episode(params, task, master.next_u64(), plan,
                                          fcfg, episode_id, sample_rng);
    note_episode(ep);
    bool prof = is_proficient(ep);
    if (prof) {
      target.admit(to_target_episode(ep));
      for (auto& seg : ep.segments) replay.push_back(seg);
      ++admitted;
    }
    write_row(ep, "", "", "", "");
    init_episodes.push_back(std::move(ep));
    ++episode_id;
  }
  if (admitted == 0 && !init_episodes.empty()) {
    // No proficient episode within the cap: fall back to top-quantile
    // admission over the attempts.
    summary.init_fallback = true;
    log_info("finetune[" + task.task_id +
             "]: no proficient init episode, admitting top returns");
    std::vector<size_t> order(init_episodes.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return init_episodes[a].episode_return > init_episodes[b].episode_return;
    });
    for (size_t i = 0; i < order.size() && i < static_cast<size_t>(fcfg.n_init);
         ++i) {
      const CollectedEpisode& ep = init_episodes[order[i]];
      target.admit(to_target_episode(ep));
      for (const auto& seg : ep.segments) replay.push_back(seg);
    }
  }
  init_episodes.clear();

  long next_ckpt = fcfg.env_step_budget >= 10 ? fcfg.env_step_budget / 10 : 1;

  // Main loop: one collected episode per round, p_step updates against the
  // snapshot taken at episode start, then the replay segments are retired.
  while (env_steps < fcfg.env_step_budget) {
    DenoiserParams params_old = params;

    CollectedEpisode ep = collect_episode(params_old, task, master.next_u64(),
                                          plan, fcfg, episode_id, sample_rng);
    note_episode(ep);
    if (is_proficient(ep)) target.admit(to_target_episode(ep));
    for (auto& seg : ep.segments) {
      if (replay.size() >= static_cast<size_t>(fcfg.replay_capacity))
        replay.erase(replay.begin());
      replay.push_back(std::move(seg));
    }

    RewardTransform transform;
    transform.standardize = fcfg.standardize_reward;
    transform.mean = reward_stat.mean();
    transform.stddev = reward_stat.stddev();

    double imp_sum = 0, reg_sum = 0, rho_sum = 0, clip_sum = 0;
    for (int i = 0; i < fcfg.p_step; ++i) {
      size_t n = std::min<size_t>(fcfg.batch_size, replay.size());
      std::vector<const RolloutSegment*> batch;
      batch.reserve(n);
      if (replay.size() <= static_cast<size_t>(fcfg.batch_size)) {
        for (const auto& seg : replay) batch.push_back(&seg);
      } else {
        for (size_t j = 0; j < n; ++j)
          batch.push_back(&replay[batch_rng.index(replay.size())]);
      }

      PgLossStats stats;
      auto [l_imp, g_imp] = clipped_pg_loss(params, params_old, batch,
                                            fcfg.clip_eps, transform, &stats);

      RegularizerInputs reg_in;
      reg_in.segments = batch;
      reg_in.target = &target;
      reg_in.plan = &plan;
      reg_in.batch_size = fcfg.batch_size;
      auto [l_reg, g_reg] = regularizer_loss(params, params_pre,
                                             fcfg.regularizer, reg_in,
                                             schedule, reg_rng);

      g_imp.add_scaled(g_reg, fcfg.lambda);
      adam_update(params, adam, g_imp, lr);

      imp_sum += l_imp;
      reg_sum += l_reg;
      rho_sum += stats.mean_rho;
      clip_sum += stats.clip_fraction;
    }
    replay.clear();
    lr = std::max(lr * fcfg.lr_decay, lr_floor);

    double inv_p = 1.0 / fcfg.p_step;
    write_row(ep, format_double(imp_sum * inv_p), format_double(reg_sum * inv_p),
              format_double(rho_sum * inv_p), format_double(clip_sum * inv_p));
    ++episode_id;

    double rs = rolling_success.mean();
    summary.peak_rolling_success = std::max(summary.peak_rolling_success, rs);
    summary.max_drop_from_peak =
        std::max(summary.max_drop_from_peak, summary.peak_rolling_success - rs);

    if (env_steps >= next_ckpt) {
      save_checkpoint(ckpt_out, {params, pretrained.K, pretrained.schedule});
      next_ckpt += std::max<long>(1, fcfg.env_step_budget / 10);
    }
  }

  save_checkpoint(ckpt_out, {params, pretrained.K, pretrained.schedule});
  csv.flush();

  summary.final_rolling_success = rolling_success.mean();
  summary.episodes = episode_id;
  summary.env_steps = env_steps;
  return summary;
}

}  // namespace diffplan
