#include "diffplan/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "diffplan/metrics.hpp"

namespace diffplan {

namespace {

SamplerPlan eval_plan(const Checkpoint& ckpt, const EvalOptions& opts) {
  NoiseSchedule schedule = build_schedule(ckpt.schedule, ckpt.K);
  SamplerPlan plan = ddim_subsequence(schedule, opts.ddim_steps, opts.eta);
  return with_variance_floor(std::move(plan),
                             opts.sigma_floor * opts.sigma_floor);
}

}  // namespace

EvalResult evaluate_planner(const TaskSpec& task, const PlannerFn& planner,
                            int episodes, int obs_horizon,
                            int planner_state_dim, int exec_horizon,
                            uint64_t seed) {
  if (episodes < 1)
    throw std::invalid_argument("evaluate: episodes must be >= 1");
  EvalResult out;
  out.episodes.reserve(episodes);
  int successes = 0;
  double return_sum = 0.0;
  RngStream master(seed);
  for (int ep = 0; ep < episodes; ++ep) {
    uint64_t ep_seed = master.next_u64();
    EpisodeResult res = run_episode(task, ep_seed, planner, obs_horizon,
                                    planner_state_dim, exec_horizon);
    out.episodes.push_back({res.episode_return, res.success});
    if (res.success) ++successes;
    return_sum += res.episode_return;
  }
  out.success_rate = static_cast<double>(successes) / episodes;
  out.mean_return = return_sum / episodes;
  return out;
}

EvalResult evaluate(const Checkpoint& ckpt, const TaskSpec& task,
                    const EvalOptions& opts, uint64_t seed) {
  if (task.state_dim > ckpt.params.cfg.state_dim)
    throw std::invalid_argument(
        "evaluate: task state_dim exceeds checkpoint state_dim");
  if (task.action_dim != ckpt.params.cfg.action_dim)
    throw std::invalid_argument(
        "evaluate: task action_dim mismatches checkpoint");
  if (opts.exec_horizon > ckpt.params.cfg.plan_horizon)
    throw std::invalid_argument(
        "evaluate: exec_horizon exceeds checkpoint plan_horizon");

  SamplerPlan plan = eval_plan(ckpt, opts);
  RngStream rng(RngStream(seed).next_u64() ^ 0xD1FFB1A5ULL);
  PlannerFn planner = make_diffusion_planner(ckpt.params, plan, &rng);
  return evaluate_planner(task, planner, opts.episodes,
                          ckpt.params.cfg.obs_horizon,
                          ckpt.params.cfg.state_dim, opts.exec_horizon, seed);
}

EvalResult evaluate_random_policy(const TaskSpec& task, int episodes,
                                  uint64_t seed) {
  RngStream rng(RngStream(seed).next_u64() ^ 0xBA5E11ULL);
  PlannerFn planner = [&rng, &task](const StateHistory&) {
    Mat seq(1, task.action_dim);
    for (int c = 0; c < task.action_dim; ++c)
      seq(0, c) = rng.uniform(-1.0, 1.0);
    return seq;
  };
  return evaluate_planner(task, planner, episodes, 1, task.state_dim, 1, seed);
}

void export_trajectories(const Checkpoint& ckpt, const TaskSpec& task,
                         int n_episodes, const EvalOptions& opts,
                         uint64_t seed, const std::string& path) {
  if (n_episodes < 0)
    throw std::invalid_argument("export_trajectories: n must be >= 0");

  std::vector<std::string> cols = {"episode", "t"};
  for (int i = 0; i < task.state_dim; ++i) cols.push_back("s" + std::to_string(i));
  for (int i = 0; i < task.action_dim; ++i) cols.push_back("a" + std::to_string(i));
  cols.push_back("reward");
  cols.push_back("success");
  CsvWriter csv(path, cols);

  if (n_episodes == 0) return;

  SamplerPlan plan = eval_plan(ckpt, opts);
  RngStream rng(RngStream(seed).next_u64() ^ 0xD1FFB1A5ULL);
  PlannerFn planner = make_diffusion_planner(ckpt.params, plan, &rng);
  RngStream master(seed);
  for (int ep = 0; ep < n_episodes; ++ep) {
    uint64_t ep_seed = master.next_u64();
    EpisodeResult res =
        run_episode(task, ep_seed, planner, ckpt.params.cfg.obs_horizon,
                    ckpt.params.cfg.state_dim, opts.exec_horizon,
                    /*record_steps=*/true);
    for (int t = 0; t < static_cast<int>(res.trace.size()); ++t) {
      const EpisodeStep& es = res.trace[t];
      std::vector<std::string> row = {std::to_string(ep), std::to_string(t)};
      for (int i = 0; i < task.state_dim; ++i)
        row.push_back(format_double(es.state[i]));
      for (int i = 0; i < task.action_dim; ++i)
        row.push_back(format_double(es.action[i]));
      row.push_back(format_double(es.reward));
      row.push_back(es.success ? "1" : "0");
      csv.write_row(row);
    }
  }
}

namespace {

struct MetricsFileSummary {
  std::string task = "?";
  std::string regularizer = "?";
  std::string seed = "?";
  double final_success = 0;
  std::string path;
};

MetricsFileSummary parse_metrics_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("ablation_report: cannot open " + path);

  MetricsFileSummary out;
  out.path = path;
  std::string line;
  int success_col = -1;
  bool saw_header = false;
  std::string last_data;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ms(line.substr(1));
      std::string tok;
      while (ms >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "task") out.task = val;
        else if (key == "regularizer") out.regularizer = val;
        else if (key == "seed") out.seed = val;
      }
      continue;
    }
    if (!saw_header) {
      std::istringstream hs(line);
      std::string col;
      int i = 0;
      while (std::getline(hs, col, ',')) {
        if (col == "rolling_success") success_col = i;
        ++i;
      }
      saw_header = true;
      continue;
    }
    last_data = line;
  }
  if (success_col < 0)
    throw std::invalid_argument("ablation_report: no rolling_success column in " +
                                path);
  if (last_data.empty())
    throw std::invalid_argument("ablation_report: no data rows in " + path);

  std::istringstream ds(last_data);
  std::string cell;
  for (int i = 0; i <= success_col; ++i)
    if (!std::getline(ds, cell, ','))
      throw std::invalid_argument("ablation_report: short row in " + path);
  out.final_success = std::stod(cell);
  return out;
}

}  // namespace

void ablation_report(const std::vector<std::string>& metric_csvs,
                     const std::string& out_path) {
  if (metric_csvs.empty())
    throw std::invalid_argument("ablation_report: no input files");

  std::vector<MetricsFileSummary> rows;
  rows.reserve(metric_csvs.size());
  for (const auto& path : metric_csvs) rows.push_back(parse_metrics_csv(path));

  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("ablation_report: cannot open " + out_path);

  os << "runs:\n";
  char buf[256];
  std::snprintf(buf, sizeof(buf), "  %-16s %-6s %-6s %s\n", "task",
                "reg", "seed", "final_success");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "  %-16s %-6s %-6s %.4f\n", r.task.c_str(),
                  r.regularizer.c_str(), r.seed.c_str(), r.final_success);
    os << buf;
  }

  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const auto& r : rows)
    groups[{r.task, r.regularizer}].push_back(r.final_success);

  os << "\nsummary (mean +/- std across seeds):\n";
  std::snprintf(buf, sizeof(buf), "  %-16s %-6s %-6s %s\n", "task", "reg",
                "seeds", "final_success");
  os << buf;
  for (const auto& [key, vals] : groups) {
    double mean = 0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0;
    for (double v : vals) var += (v - mean) * (v - mean);
    double sd = vals.size() > 1 ? std::sqrt(var / (vals.size() - 1)) : 0.0;
    std::snprintf(buf, sizeof(buf), "  %-16s %-6s %-6zu %.4f +/- %.4f\n",
                  key.first.c_str(), key.second.c_str(), vals.size(), mean, sd);
    os << buf;
  }
}

}  // namespace diffplan
