#include "diffplan/commands.hpp"

#include <cstdint>
#include <iostream>

#include <CLI11.hpp>

#include "diffplan/config.hpp"
#include "diffplan/dataset.hpp"
#include "diffplan/errors.hpp"
#include "diffplan/evaluate.hpp"
#include "diffplan/finetune.hpp"
#include "diffplan/metrics.hpp"
#include "diffplan/pretrain.hpp"
#include "diffplan/tasks.hpp"

namespace diffplan {

namespace {

Config build_config(const std::string& config_path,
                    const std::vector<std::string>& overrides) {
  Config cfg;
  if (!config_path.empty()) cfg.load_file(config_path);
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

std::vector<TaskSpec> build_suite(const Config& cfg,
                                  const std::string& suite_name) {
  if (suite_name != "default")
    throw ConfigError("unknown suite '" + suite_name + "' (only: default)");
  return register_default_suite(cfg.get_int("env.episode_len"));
}

EvalOptions eval_options(const Config& cfg, int episodes) {
  EvalOptions opts;
  opts.episodes = episodes;
  opts.exec_horizon = cfg.get_int("finetune.exec_horizon");
  opts.ddim_steps = cfg.get_int("finetune.ddim_steps");
  opts.eta = cfg.get_double("finetune.eta");
  opts.sigma_floor = cfg.get_double("finetune.sigma_floor");
  return opts;
}

struct CommonFlags {
  std::string config_path;
  std::vector<std::string> overrides;
  uint64_t seed = 1;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_seed = true) {
  cmd->add_option("--config", flags.config_path, "config file (JSON)");
  cmd->add_option("--set", flags.overrides,
                  "override a config key, KEY=VALUE (repeatable)");
  if (with_seed)
    cmd->add_option("--seed", flags.seed, "random seed for this command");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"diffusion action planner: pre-train on mixed offline data, "
               "fine-tune per task with reward feedback"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data",
                                 "generate the mixed offline dataset");
  CommonFlags gen_flags;
  int episodes_per_task = 200;
  double noise = 0.5;
  std::string gen_suite = "default";
  std::string gen_out;
  gen->add_option("--suite", gen_suite, "task suite name");
  gen->add_option("--episodes-per-task", episodes_per_task,
                  "episodes per task");
  gen->add_option("--noise", noise, "controller noise level in [0,1]");
  gen->add_option("--out", gen_out, "output dataset path")->required();
  add_common(gen, gen_flags);

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "stage-1 training");
  CommonFlags pre_flags;
  std::string pre_data, pre_out, pre_metrics;
  pre->add_option("--data", pre_data, "dataset path")->required();
  pre->add_option("--out", pre_out, "output checkpoint path")->required();
  pre->add_option("--metrics", pre_metrics,
                  "metrics CSV path (default: <out>.metrics.csv)");
  add_common(pre, pre_flags);

  // finetune
  auto* fin = app.add_subcommand("finetune", "stage-2 per-task fine-tuning");
  CommonFlags fin_flags;
  std::string fin_ckpt, fin_task, fin_out, fin_metrics;
  fin->add_option("--ckpt", fin_ckpt, "pre-trained checkpoint")->required();
  fin->add_option("--task", fin_task, "task id")->required();
  fin->add_option("--out", fin_out, "output checkpoint path")->required();
  fin->add_option("--metrics", fin_metrics,
                  "metrics CSV path (default: <out>.metrics.csv)");
  add_common(fin, fin_flags);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a task");
  CommonFlags ev_flags;
  std::string ev_ckpt, ev_task;
  int ev_episodes = 50;
  double ev_eta = -1.0;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--task", ev_task, "task id")->required();
  ev->add_option("--episodes", ev_episodes, "evaluation episodes");
  ev->add_option("--eta", ev_eta, "sampler eta override (e.g. 0 deterministic)");
  add_common(ev, ev_flags);

  // export-traj
  auto* ex = app.add_subcommand("export-traj", "dump planner trajectories");
  CommonFlags ex_flags;
  std::string ex_ckpt, ex_task, ex_out;
  int ex_n = 10;
  ex->add_option("--ckpt", ex_ckpt, "checkpoint path")->required();
  ex->add_option("--task", ex_task, "task id")->required();
  ex->add_option("-n", ex_n, "episode count");
  ex->add_option("--out", ex_out, "output CSV path")->required();
  add_common(ex, ex_flags);

  // report
  auto* rep = app.add_subcommand("report", "ablation summary table");
  std::vector<std::string> rep_in;
  std::string rep_out;
  rep->add_option("--in", rep_in, "fine-tuning metrics CSVs")->required();
  rep->add_option("--out", rep_out, "output table path")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);  // CLI11 takes args in reverse order
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*gen) {
      Config cfg = build_config(gen_flags.config_path, gen_flags.overrides);
      if (noise < 0.0 || noise > 1.0)
        throw ConfigError("--noise must be in [0, 1]");
      auto suite = build_suite(cfg, gen_suite);
      Dataset ds = Dataset::generate(suite, episodes_per_task, noise,
                                     gen_flags.seed);
      ds.save(gen_out);
      log_info("wrote " + std::to_string(ds.size()) + " transitions to " +
               gen_out);
      for (const auto& sum : ds.summaries())
        log_info("  " + sum.task_id +
                 " success_rate=" + format_double(sum.success_rate));
      return 0;
    }

    if (*pre) {
      Config cfg = build_config(pre_flags.config_path, pre_flags.overrides);
      Dataset ds = Dataset::load(pre_data);
      auto suite = build_suite(cfg, cfg.get_string("env.suite"));
      std::string metrics =
          pre_metrics.empty() ? pre_out + ".metrics.csv" : pre_metrics;
      PretrainResult res = pretrain(cfg, ds, suite, pre_out, metrics,
                                    pre_flags.seed);
      log_info("pretrain done: loss " + format_double(res.initial_loss) +
               " -> " + format_double(res.final_loss));
      return 0;
    }

    if (*fin) {
      Config cfg = build_config(fin_flags.config_path, fin_flags.overrides);
      Checkpoint ckpt = load_checkpoint(fin_ckpt);
      auto suite = build_suite(cfg, cfg.get_string("env.suite"));
      const TaskSpec& task = find_task(suite, fin_task);
      FinetuneConfig fcfg = FinetuneConfig::from_config(cfg);
      std::string metrics =
          fin_metrics.empty() ? fin_out + ".metrics.csv" : fin_metrics;
      FinetuneSummary sum =
          finetune_task(ckpt, task, fcfg, fin_out, metrics, fin_flags.seed);
      log_info("finetune done: rolling success " +
               format_double(sum.final_rolling_success) + " after " +
               std::to_string(sum.env_steps) + " env steps");
      return 0;
    }

    if (*ev) {
      Config cfg = build_config(ev_flags.config_path, ev_flags.overrides);
      Checkpoint ckpt = load_checkpoint(ev_ckpt);
      auto suite = build_suite(cfg, cfg.get_string("env.suite"));
      const TaskSpec& task = find_task(suite, ev_task);
      EvalOptions opts = eval_options(cfg, ev_episodes);
      if (ev_eta >= 0.0) opts.eta = ev_eta;
      EvalResult res = evaluate(ckpt, task, opts, ev_flags.seed);
      std::cout << "task=" << task.task_id << " episodes=" << ev_episodes
                << " success_rate=" << format_double(res.success_rate)
                << " mean_return=" << format_double(res.mean_return) << "\n";
      return 0;
    }

    if (*ex) {
      Config cfg = build_config(ex_flags.config_path, ex_flags.overrides);
      Checkpoint ckpt = load_checkpoint(ex_ckpt);
      auto suite = build_suite(cfg, cfg.get_string("env.suite"));
      const TaskSpec& task = find_task(suite, ex_task);
      if (ex_n < 0) throw ConfigError("-n must be >= 0");
      EvalOptions opts = eval_options(cfg, 1);
      export_trajectories(ckpt, task, ex_n, opts, ex_flags.seed, ex_out);
      log_info("wrote " + std::to_string(ex_n) + " episodes to " + ex_out);
      return 0;
    }

    if (*rep) {
      ablation_report(rep_in, rep_out);
      log_info("wrote report to " + rep_out);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

}  // namespace diffplan
