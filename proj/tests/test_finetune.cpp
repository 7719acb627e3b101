#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "diffplan/errors.hpp"
#include "diffplan/finetune.hpp"
#include "support/oracles.hpp"

using namespace diffplan;

namespace {

NetConfig task_net() {
  NetConfig cfg;
  cfg.plan_horizon = 4;
  cfg.action_dim = 2;
  cfg.obs_horizon = 2;
  cfg.state_dim = 4;
  cfg.time_embed_dim = 8;
  cfg.hidden = {16, 16};
  return cfg;
}

DenoiserParams randomized_params(const NetConfig& cfg, uint64_t seed) {
  RngStream rng(seed);
  DenoiserParams p = init_params(cfg, rng);
  size_t last = p.weights.size() - 1;
  for (int i = 0; i < p.weights[last].rows(); ++i)
    for (int j = 0; j < p.weights[last].cols(); ++j)
      p.weights[last](i, j) = 0.1 * rng.normal();
  return p;
}

void perturb(DenoiserParams& p, double scale, uint64_t seed) {
  RngStream rng(seed);
  for (auto& w : p.weights)
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) w(i, j) += scale * rng.normal();
}

struct Fixture {
  NetConfig cfg = task_net();
  NoiseSchedule schedule = build_schedule(ScheduleKind::kCosine, 30);
  SamplerPlan plan =
      with_variance_floor(ddim_subsequence(schedule, 6, 1.0), 0.05 * 0.05);
  DenoiserParams params_old;
  std::vector<RolloutSegment> segments;

  explicit Fixture(int n_segments = 4, uint64_t seed = 5) {
    params_old = randomized_params(cfg, seed);
    auto suite = register_default_suite(20);
    const TaskSpec& task = find_task(suite, "point_reach");
    RngStream rng(seed + 1);
    EnvState env = reset(task, seed + 2);
    StateHistoryBuffer hist(cfg.obs_horizon, cfg.state_dim);
    hist.push(env.s);
    for (int i = 0; i < n_segments; ++i) {
      if (env.done) {
        env = reset(task, seed + 3 + i);
        hist.clear();
        hist.push(env.s);
      }
      segments.push_back(
          collect_segment(params_old, env, hist, plan, 1.0, 4, rng));
    }
  }

  std::vector<const RolloutSegment*> batch() const {
    std::vector<const RolloutSegment*> out;
    for (const auto& seg : segments) out.push_back(&seg);
    return out;
  }
};

}  // namespace

TEST_CASE("clipped step term matches hand arithmetic") {
  CHECK(clipped_step_term(2.0, 1.0, 0.2) == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(clipped_step_term(0.5, -1.0, 0.2) ==
        doctest::Approx(-0.8).epsilon(1e-12));
  CHECK(clipped_step_term(1.0, 0.7, 0.2) ==
        doctest::Approx(0.7).epsilon(1e-12));
}

TEST_CASE("clipped step term is positively homogeneous in the reward") {
  RngStream rng(3);
  for (int i = 0; i < 200; ++i) {
    double rho = std::exp(rng.uniform(-2.0, 2.0));
    double rhat = rng.uniform(-3.0, 3.0);
    double c = std::exp(rng.uniform(-2.0, 2.0));
    double base = clipped_step_term(rho, rhat, 0.2);
    double scaled = clipped_step_term(rho, c * rhat, 0.2);
    CHECK(scaled == doctest::Approx(c * base).epsilon(1e-9));
  }
}

TEST_CASE("importance ratio is exactly one at the snapshot") {
  Fixture fx;
  for (const auto& seg : fx.segments)
    for (const auto& ts : seg.trace.steps)
      CHECK(importance_ratio(fx.params_old, fx.params_old, ts, seg.s_hist) ==
            1.0);
}

TEST_CASE("importance ratio moves continuously with the parameters") {
  Fixture fx(2);
  const auto& seg = fx.segments[0];
  const auto& ts = seg.trace.steps[0];

  double d1 = 1e-4, d2 = 1e-5;
  DenoiserParams p1 = fx.params_old;
  perturb(p1, d1, 9);
  DenoiserParams p2 = fx.params_old;
  perturb(p2, d2, 9);
  double r1 = importance_ratio(p1, fx.params_old, ts, seg.s_hist);
  double r2 = importance_ratio(p2, fx.params_old, ts, seg.s_hist);
  CHECK(std::abs(r1 - 1.0) < 0.1);
  // A 10x smaller perturbation gives ~10x smaller deviation from 1.
  CHECK(std::abs(r2 - 1.0) == doctest::Approx(std::abs(r1 - 1.0) / 10.0)
                                  .epsilon(0.2));
}

TEST_CASE("log ratios add across the trace") {
  Fixture fx(2);
  // The first subsequence step has a large mean gain, so keep the
  // perturbation small enough that no per-step log ratio hits the clamp.
  DenoiserParams p = fx.params_old;
  perturb(p, 1e-5, 17);
  const auto& seg = fx.segments[0];

  double log_sum = 0;
  for (const auto& ts : seg.trace.steps)
    log_sum += std::log(importance_ratio(p, fx.params_old, ts, seg.s_hist));

  double direct = 0;
  for (const auto& ts : seg.trace.steps) {
    ActionSequence eps_new = predict_noise(p, ts.a_in, seg.s_hist, ts.k);
    ActionSequence eps_old =
        predict_noise(fx.params_old, ts.a_in, seg.s_hist, ts.k);
    ActionSequence mean_new = plan_step_mean(ts.step, ts.a_in, eps_new);
    ActionSequence mean_old = plan_step_mean(ts.step, ts.a_in, eps_old);
    direct += gaussian_logprob(ts.a_out, mean_new, ts.var) -
              gaussian_logprob(ts.a_out, mean_old, ts.var);
  }
  CHECK(log_sum == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("zero-variance steps are rejected for fine-tuning") {
  Fixture fx(1);
  TraceStep ts = fx.segments[0].trace.steps[0];
  ts.var = 0.0;
  CHECK_THROWS_AS(
      importance_ratio(fx.params_old, fx.params_old, ts, fx.segments[0].s_hist),
      std::invalid_argument);
}

TEST_CASE("clipped loss at the snapshot equals the negated reward sum") {
  Fixture fx(5);
  RewardTransform raw;  // identity
  PgLossStats stats;
  auto [loss, grads] = clipped_pg_loss(fx.params_old, fx.params_old,
                                       fx.batch(), 0.2, raw, &stats);
  double expect = 0;
  for (const auto& seg : fx.segments)
    expect -= seg.seg_reward * static_cast<double>(seg.trace.steps.size());
  expect /= static_cast<double>(fx.segments.size());
  CHECK(loss == doctest::Approx(expect).epsilon(1e-12));
  CHECK(stats.mean_rho == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(stats.clip_fraction == 0.0);
}

TEST_CASE("clipped gradient at the snapshot equals the plain estimator") {
  Fixture fx(4);
  RewardTransform raw;
  auto [loss, grads] =
      clipped_pg_loss(fx.params_old, fx.params_old, fx.batch(), 0.2, raw);

  // Reference: the score-function estimator, grad of
  //   -(1/B) sum_b rhat_b sum_k log p(a_out | mean_theta, var)
  const NetConfig& cfg = fx.cfg;
  size_t rows = 0;
  for (const auto& seg : fx.segments) rows += seg.trace.steps.size();
  Mat inputs(rows, cfg.input_dim());
  size_t r = 0;
  for (const auto& seg : fx.segments)
    for (const auto& ts : seg.trace.steps)
      inputs.row(r++) = pack_input(cfg, ts.a_in, seg.s_hist, ts.k);
  ForwardCache cache;
  Mat eps_hat = forward(fx.params_old, inputs, &cache);
  Mat d_out = Mat::Zero(rows, cfg.output_dim());
  double batch_n = static_cast<double>(fx.segments.size());
  r = 0;
  for (const auto& seg : fx.segments) {
    for (const auto& ts : seg.trace.steps) {
      Mat a_in = inputs.row(r).head(cfg.output_dim());
      Mat jac;
      Mat mean = plan_step_mean(ts.step, a_in, eps_hat.row(r), &jac);
      Mat a_out(1, cfg.output_dim());
      int pos = 0;
      for (int rr = 0; rr < ts.a_out.rows(); ++rr)
        for (int cc = 0; cc < ts.a_out.cols(); ++cc)
          a_out(0, pos++) = ts.a_out(rr, cc);
      // d(-rhat*logp)/d eps_hat
      d_out.row(r) = (-seg.seg_reward / batch_n / ts.var) *
                     (a_out - mean).cwiseProduct(jac);
      ++r;
    }
  }
  GradientBundle ref = backward(fx.params_old, cache, d_out);

  for (size_t l = 0; l < grads.weights.size(); ++l) {
    CHECK((grads.weights[l] - ref.weights[l]).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((grads.biases[l] - ref.biases[l]).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("clipped loss gradients match finite differences off-snapshot") {
  Fixture fx(3);
  DenoiserParams p = fx.params_old;
  perturb(p, 5e-3, 23);
  RewardTransform raw;
  auto [loss, grads] =
      clipped_pg_loss(p, fx.params_old, fx.batch(), 0.2, raw);

  auto loss_fn = [&](const DenoiserParams& q) {
    return clipped_pg_loss(q, fx.params_old, fx.batch(), 0.2, raw).first;
  };
  RngStream probe(31);
  auto res = testing::check_gradients(p, grads, loss_fn, probe, 3);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("kl regularizer is zero at the pre-trained parameters") {
  Fixture fx(3);
  RegularizerInputs in;
  auto batch = fx.batch();
  in.segments = batch;
  RngStream rng(1);
  auto [loss, grads] = regularizer_loss(fx.params_old, fx.params_old,
                                        RegularizerKind::kKl, in, fx.schedule,
                                        rng);
  CHECK(loss == 0.0);
  CHECK(grads.max_abs() == 0.0);
}

TEST_CASE("kl regularizer gradients match finite differences") {
  Fixture fx(3);
  DenoiserParams p = fx.params_old;
  perturb(p, 1e-2, 41);
  RegularizerInputs in;
  auto batch = fx.batch();
  in.segments = batch;
  RngStream rng(1);
  auto [loss, grads] = regularizer_loss(p, fx.params_old, RegularizerKind::kKl,
                                        in, fx.schedule, rng);
  CHECK(loss > 0.0);

  auto loss_fn = [&](const DenoiserParams& q) {
    RngStream r2(1);
    return regularizer_loss(q, fx.params_old, RegularizerKind::kKl, in,
                            fx.schedule, r2)
        .first;
  };
  RngStream probe(43);
  auto res = testing::check_gradients(p, grads, loss_fn, probe, 3);
  CHECK(res.max_rel_err <= 1e-4);
}

TEST_CASE("none regularizer returns exact zeros") {
  Fixture fx(1);
  RegularizerInputs in;
  RngStream rng(1);
  auto [loss, grads] = regularizer_loss(fx.params_old, fx.params_old,
                                        RegularizerKind::kNone, in, fx.schedule,
                                        rng);
  CHECK(loss == 0.0);
  CHECK(grads.max_abs() == 0.0);
}

TEST_CASE("bc regularizer needs a seeded target buffer") {
  Fixture fx(1);
  TargetBuffer target(4);
  RegularizerInputs in;
  in.target = &target;
  RngStream rng(1);
  CHECK_THROWS_AS(regularizer_loss(fx.params_old, fx.params_old,
                                   RegularizerKind::kBc, in, fx.schedule, rng),
                  UnavailableError);
}

TEST_CASE("pl regularizer is finite and non-negative") {
  Fixture fx(3);
  RegularizerInputs in;
  auto batch = fx.batch();
  in.segments = batch;
  in.plan = &fx.plan;
  in.batch_size = 3;
  RngStream rng(7);
  auto [loss, grads] = regularizer_loss(fx.params_old, fx.params_old,
                                        RegularizerKind::kPl, in, fx.schedule,
                                        rng);
  CHECK(loss >= 0.0);
  CHECK(std::isfinite(loss));
  CHECK(grads.finite());
}

TEST_CASE("target buffer evicts the lowest-scoring episode") {
  TargetBuffer buf(2);
  auto make_ep = [](double score) {
    TargetBuffer::Episode ep;
    ep.records.push_back({Mat::Zero(1, 1), Mat::Constant(1, 1, score)});
    ep.score = score;
    return ep;
  };
  buf.admit(make_ep(1.0));
  buf.admit(make_ep(5.0));
  buf.admit(make_ep(3.0));
  CHECK(buf.episode_count() == 2);
  double lowest = 1e18;
  for (const auto& ep : buf.episodes()) lowest = std::min(lowest, ep.score);
  CHECK(lowest == 3.0);
}

TEST_CASE("discounted segment rewards") {
  std::vector<double> r123 = {1.0, 2.0, 3.0};
  CHECK(discounted_sum(r123, 1.0) == doctest::Approx(6.0));
  CHECK(discounted_sum(r123, 0.9) == doctest::Approx(1.0 + 1.8 + 2.43));
  std::vector<double> r1 = {4.0};
  CHECK(discounted_sum(r1, 0.5) == doctest::Approx(4.0));
}

TEST_CASE("collect_segment truncates at episode end") {
  auto suite = register_default_suite(1);  // one-step episodes
  const TaskSpec& task = find_task(suite, "point_reach");
  NetConfig cfg = task_net();
  DenoiserParams p = randomized_params(cfg, 3);
  NoiseSchedule schedule = build_schedule(ScheduleKind::kCosine, 10);
  SamplerPlan plan =
      with_variance_floor(ddim_subsequence(schedule, 4, 1.0), 1e-3);

  EnvState env = reset(task, 11);
  StateHistoryBuffer hist(cfg.obs_horizon, cfg.state_dim);
  hist.push(env.s);
  RngStream rng(5);
  RolloutSegment seg = collect_segment(p, env, hist, plan, 1.0, 4, rng);
  CHECK(env.done);
  CHECK(env.t == 1);  // only one action executed

  // The single reward equals an independent replay of the recorded action.
  EnvState replay_env = reset(task, 11);
  StepResult res =
      step(replay_env, seg.trace.final_action.row(0).transpose().head<2>());
  CHECK(seg.seg_reward == res.reward);
}

TEST_CASE("denoising MDP pays the segment reward only at the end") {
  Fixture fx(4);
  for (const auto& seg : fx.segments) {
    std::vector<double> rewards = denoising_mdp_rewards(seg);
    REQUIRE(rewards.size() == seg.trace.steps.size());
    double total = 0;
    for (double r : rewards) total += r;
    CHECK(total == seg.seg_reward);  // exact
    for (size_t i = 0; i + 1 < rewards.size(); ++i) CHECK(rewards[i] == 0.0);
  }
}

TEST_CASE("finetune_task smoke run writes metrics and a checkpoint") {
  auto suite = register_default_suite(10);
  const TaskSpec& task = find_task(suite, "point_reach");
  NetConfig cfg = task_net();
  Checkpoint ckpt{randomized_params(cfg, 77), 30, ScheduleKind::kCosine};

  FinetuneConfig fcfg;
  fcfg.env_step_budget = 300;
  fcfg.exec_horizon = 4;
  fcfg.ddim_steps = 5;
  fcfg.n_init = 2;
  fcfg.p_step = 2;
  fcfg.batch_size = 8;
  fcfg.lr = 1e-4;
  fcfg.regularizer = RegularizerKind::kBc;

  std::string ckpt_path = "test_ft_ckpt.bin";
  std::string metrics_path = "test_ft_metrics.csv";
  FinetuneSummary sum =
      finetune_task(ckpt, task, fcfg, ckpt_path, metrics_path, 9);
  CHECK(sum.env_steps >= 300);
  CHECK(sum.episodes > 0);

  Checkpoint loaded = load_checkpoint(ckpt_path);
  CHECK(loaded.params.cfg == cfg);

  std::ifstream ms(metrics_path);
  REQUIRE(ms.good());
  std::string line;
  std::getline(ms, line);
  CHECK(line.find("task=point_reach") != std::string::npos);
  std::getline(ms, line);
  CHECK(line.find("rolling_success") != std::string::npos);

  std::remove(ckpt_path.c_str());
  std::remove(metrics_path.c_str());
}

TEST_CASE("pure clipped objective runs without a regularizer") {
  auto suite = register_default_suite(10);
  const TaskSpec& task = find_task(suite, "point_reach");
  NetConfig cfg = task_net();
  Checkpoint ckpt{randomized_params(cfg, 78), 30, ScheduleKind::kCosine};

  FinetuneConfig fcfg;
  fcfg.env_step_budget = 200;
  fcfg.exec_horizon = 4;
  fcfg.ddim_steps = 5;
  fcfg.n_init = 2;
  fcfg.p_step = 1;
  fcfg.batch_size = 8;
  fcfg.regularizer = RegularizerKind::kNone;
  fcfg.lambda = 0.0;

  std::string ckpt_path = "test_ft_none.bin";
  std::string metrics_path = "test_ft_none.csv";
  FinetuneSummary sum =
      finetune_task(ckpt, task, fcfg, ckpt_path, metrics_path, 4);
  CHECK(sum.env_steps >= 200);

  // With kind none the regularizer column is exactly zero on update rows.
  std::ifstream ms(metrics_path);
  std::string line;
  std::getline(ms, line);  // comment
  std::getline(ms, line);  // header
  while (std::getline(ms, line)) {
    auto cols = [&] {
      std::vector<std::string> out;
      std::string cell;
      std::istringstream ss(line);
      while (std::getline(ss, cell, ',')) out.push_back(cell);
      return out;
    }();
    if (cols.size() >= 7 && !cols[6].empty()) CHECK(cols[6] == "0");
  }
  std::remove(ckpt_path.c_str());
  std::remove(metrics_path.c_str());
}

TEST_CASE("clipped loss rejects an empty batch") {
  Fixture fx(1);
  std::vector<const RolloutSegment*> empty;
  RewardTransform raw;
  CHECK_THROWS_AS(
      clipped_pg_loss(fx.params_old, fx.params_old, empty, 0.2, raw),
      std::invalid_argument);
}

TEST_CASE("buffer seeding falls back to top returns when nothing is proficient") {
  auto suite = register_default_suite(10);
  const TaskSpec& task = find_task(suite, "push");  // unsolved by a fresh net
  NetConfig cfg = task_net();
  Checkpoint ckpt{randomized_params(cfg, 5), 30, ScheduleKind::kCosine};

  FinetuneConfig fcfg;
  fcfg.env_step_budget = 30;  // three episodes; too few for the quantile rule
  fcfg.exec_horizon = 4;
  fcfg.ddim_steps = 5;
  fcfg.n_init = 2;
  fcfg.p_step = 1;
  fcfg.batch_size = 4;

  FinetuneSummary sum = finetune_task(ckpt, task, fcfg, "test_fb.ckpt",
                                      "test_fb.csv", 3);
  CHECK(sum.init_fallback);
  std::remove("test_fb.ckpt");
  std::remove("test_fb.csv");
}
