#include <benchmark/benchmark.h>

#include "diffplan/diffusion.hpp"
#include "diffplan/finetune.hpp"

using namespace diffplan;

namespace {

NetConfig bench_net(int width) {
  NetConfig cfg;
  cfg.plan_horizon = 12;
  cfg.action_dim = 2;
  cfg.obs_horizon = 2;
  cfg.state_dim = 4;
  cfg.time_embed_dim = 32;
  cfg.hidden = {width, width, width};
  return cfg;
}

DenoiserParams bench_params(const NetConfig& cfg) {
  RngStream rng(1);
  DenoiserParams p = init_params(cfg, rng);
  for (auto& w : p.weights)
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) w(i, j) += 0.01 * rng.normal();
  return p;
}

}  // namespace

static void BM_ScheduleBuild(benchmark::State& state) {
  for (auto _ : state)
    benchmark::DoNotOptimize(build_schedule(ScheduleKind::kCosine, 100));
}
BENCHMARK(BM_ScheduleBuild);

static void BM_DenoiserForward(benchmark::State& state) {
  NetConfig cfg = bench_net(static_cast<int>(state.range(0)));
  DenoiserParams p = bench_params(cfg);
  RngStream rng(3);
  Mat inputs = Mat::NullaryExpr(256, cfg.input_dim(), [&] { return rng.normal(); });
  for (auto _ : state) benchmark::DoNotOptimize(forward(p, inputs));
}
BENCHMARK(BM_DenoiserForward)->Arg(64)->Arg(128)->Arg(256);

static void BM_DenoiserLossGrad(benchmark::State& state) {
  NetConfig cfg = bench_net(static_cast<int>(state.range(0)));
  DenoiserParams p = bench_params(cfg);
  RngStream rng(3);
  Mat inputs = Mat::NullaryExpr(256, cfg.input_dim(), [&] { return rng.normal(); });
  Mat targets = Mat::NullaryExpr(256, cfg.output_dim(), [&] { return rng.normal(); });
  for (auto _ : state)
    benchmark::DoNotOptimize(loss_and_grad_rows(p, inputs, targets));
}
BENCHMARK(BM_DenoiserLossGrad)->Arg(64)->Arg(128)->Arg(256);

static void BM_SampleActionSequence(benchmark::State& state) {
  NetConfig cfg = bench_net(128);
  DenoiserParams p = bench_params(cfg);
  NoiseSchedule s = build_schedule(ScheduleKind::kCosine, 100);
  SamplerPlan plan = with_variance_floor(
      ddim_subsequence(s, static_cast<int>(state.range(0)), 1.0), 2.5e-3);
  RngStream rng(5);
  Mat sh = Mat::Zero(cfg.obs_horizon, cfg.state_dim);
  for (auto _ : state)
    benchmark::DoNotOptimize(sample_action_sequence(p, sh, plan, rng));
}
BENCHMARK(BM_SampleActionSequence)->Arg(10)->Arg(100);

BENCHMARK_MAIN();
