#include "diffplan/pretrain.hpp"

#include <cmath>
#include <sstream>

#include "diffplan/diffusion.hpp"
#include "diffplan/errors.hpp"
#include "diffplan/evaluate.hpp"
#include "diffplan/metrics.hpp"

namespace diffplan {

PretrainResult pretrain(const Config& cfg, const Dataset& dataset,
                        const std::vector<TaskSpec>& suite,
                        const std::string& ckpt_path,
                        const std::string& metrics_path, uint64_t seed) {
  cfg.validate();
  if (dataset.size() == 0)
    throw std::invalid_argument("pretrain: empty dataset");

  NetConfig net;
  net.plan_horizon = cfg.get_int("net.plan_horizon");
  net.action_dim = dataset.action_dim();
  net.obs_horizon = cfg.get_int("net.obs_horizon");
  net.state_dim = dataset.state_dim();
  net.time_embed_dim = cfg.get_int("net.time_embed_dim");
  net.hidden.assign(cfg.get_int("net.hidden_layers"),
                    cfg.get_int("net.hidden_width"));

  ScheduleKind kind = schedule_kind_from_string(cfg.get_string("diffusion.schedule"));
  int K = cfg.get_int("diffusion.K");
  NoiseSchedule schedule =
      build_schedule(kind, K, cfg.get_double("diffusion.beta_start"),
                     cfg.get_double("diffusion.beta_end"));

  RngStream rng(seed);
  DenoiserParams params = init_params(net, rng);
  AdamState adam = AdamState::zeros_like(params);

  int steps = cfg.get_int("pretrain.steps");
  int batch_size = cfg.get_int("pretrain.batch_size");
  double lr = cfg.get_double("pretrain.lr");
  int log_interval = cfg.get_int("pretrain.log_interval");
  int eval_interval = cfg.get_int("pretrain.eval_interval");
  int eval_episodes = cfg.get_int("pretrain.eval_episodes");

  std::vector<std::string> cols = {"step", "loss"};
  for (const auto& spec : suite) cols.push_back("succ_" + spec.task_id);
  CsvWriter csv(metrics_path, cols, "stage=pretrain seed=" + std::to_string(seed));

  EvalOptions eval_opts;
  eval_opts.episodes = eval_episodes;
  eval_opts.exec_horizon = cfg.get_int("finetune.exec_horizon");
  eval_opts.ddim_steps = cfg.get_int("finetune.ddim_steps");
  eval_opts.eta = cfg.get_double("finetune.eta");
  eval_opts.sigma_floor = cfg.get_double("finetune.sigma_floor");

  PretrainResult out;
  out.checkpoint.K = K;
  out.checkpoint.schedule = kind;

  double window_sum = 0.0;
  int window_n = 0;
  bool have_initial = false;
  int ckpt_stride = steps >= 10 ? steps / 10 : 1;

  for (int step = 1; step <= steps; ++step) {
    std::vector<TrainingWindow> windows = dataset.sample_windows(
        batch_size, net.obs_horizon, net.plan_horizon, rng);
    std::vector<ConditionedSequence> batch;
    batch.reserve(windows.size());
    for (auto& w : windows)
      batch.push_back({std::move(w.s_hist), std::move(w.a_seq)});

    auto [loss, grads] = pretrain_loss_batch(params, batch, schedule, rng);
    if (!std::isfinite(loss) || !grads.finite()) {
      save_checkpoint(ckpt_path + ".diverged",
                      {params, K, kind});
      throw UpdateRejected("pretrain: non-finite loss at step " +
                           std::to_string(step) +
                           "; snapshot written to " + ckpt_path + ".diverged");
    }
    adam_update(params, adam, grads, lr);

    window_sum += loss;
    window_n += 1;
    if (step % log_interval == 0 || step == steps) {
      double smoothed = window_sum / window_n;
      if (!have_initial) {
        out.initial_loss = smoothed;
        have_initial = true;
      }
      out.final_loss = smoothed;
      window_sum = 0.0;
      window_n = 0;

      std::vector<std::string> row = {std::to_string(step),
                                      format_double(smoothed)};
      bool do_eval = eval_interval > 0 && step % eval_interval == 0;
      if (do_eval) {
        Checkpoint snap{params, K, kind};
        for (const auto& spec : suite) {
          EvalResult er = evaluate(snap, spec, eval_opts, seed + step);
          row.push_back(format_double(er.success_rate));
        }
      } else {
        for (size_t i = 0; i < suite.size(); ++i) row.push_back("");
      }
      csv.write_row(row);
      log_debug("pretrain step " + std::to_string(step) + " loss " +
                format_double(smoothed));
    }

    if (step % ckpt_stride == 0)
      save_checkpoint(ckpt_path, {params, K, kind});
  }

  out.checkpoint.params = std::move(params);
  save_checkpoint(ckpt_path, out.checkpoint);
  csv.flush();
  return out;
}

}  // namespace diffplan
