#include <doctest.h>

#include <set>
#include <stdexcept>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "diffplan/evaluate.hpp"
#include "diffplan/metrics.hpp"

using namespace diffplan;

namespace {

Checkpoint fresh_checkpoint(uint64_t seed = 2) {
  NetConfig cfg;
  cfg.plan_horizon = 4;
  cfg.action_dim = 2;
  cfg.obs_horizon = 2;
  cfg.state_dim = 4;
  cfg.time_embed_dim = 8;
  cfg.hidden = {16};
  RngStream rng(seed);
  return {init_params(cfg, rng), 20, ScheduleKind::kCosine};
}

}  // namespace

TEST_CASE("scripted oracle wrapped as planner solves point_reach") {
  auto suite = register_default_suite();
  const TaskSpec& task = find_task(suite, "point_reach");

  // The controller reads (pos, goal) off the latest state row.
  PlannerFn oracle = [&task](const StateHistory& h) {
    Eigen::Vector2d pos = h.row(h.rows() - 1).head<2>();
    Eigen::Vector2d goal = h.row(h.rows() - 1).segment<2>(2);
    Eigen::Vector2d cmd = 5.0 * (goal - pos);
    cmd = cmd.cwiseMax(-1.0).cwiseMin(1.0);
    Mat seq(2, 2);
    seq.row(0) = cmd.transpose();
    seq.row(1) = cmd.transpose();
    return seq;
  };
  EvalResult res = evaluate_planner(task, oracle, 100, 1, 4, 2, 31);
  CHECK(res.success_rate >= 0.95);
}

TEST_CASE("evaluation is deterministic per seed") {
  auto suite = register_default_suite(20);
  const TaskSpec& task = find_task(suite, "point_reach");
  Checkpoint ckpt = fresh_checkpoint();
  EvalOptions opts;
  opts.episodes = 10;
  opts.exec_horizon = 4;
  opts.ddim_steps = 5;

  EvalResult a = evaluate(ckpt, task, opts, 50);
  EvalResult b = evaluate(ckpt, task, opts, 50);
  CHECK(a.success_rate == b.success_rate);
  CHECK(a.mean_return == b.mean_return);
  REQUIRE(a.episodes.size() == b.episodes.size());
  for (size_t i = 0; i < a.episodes.size(); ++i)
    CHECK(a.episodes[i].episode_return == b.episodes[i].episode_return);
}

TEST_CASE("random baseline gives a small success rate on reach tasks") {
  auto suite = register_default_suite();
  const TaskSpec& task = find_task(suite, "point_reach");
  EvalResult res = evaluate_random_policy(task, 200, 7);
  CHECK(res.success_rate >= 0.0);
  CHECK(res.success_rate <= 0.25);
}

TEST_CASE("evaluate rejects dimension mismatches") {
  auto suite = register_default_suite();
  TaskSpec task = find_task(suite, "point_reach");
  Checkpoint ckpt = fresh_checkpoint();
  task.state_dim = 9;
  CHECK_THROWS_AS(evaluate(ckpt, task, EvalOptions{}, 1),
                  std::invalid_argument);
}

TEST_CASE("export with zero episodes writes only the header") {
  auto suite = register_default_suite(10);
  const TaskSpec& task = find_task(suite, "point_reach");
  Checkpoint ckpt = fresh_checkpoint();
  std::string path = "test_traj0.csv";
  EvalOptions opts;
  opts.exec_horizon = 4;
  opts.ddim_steps = 5;
  export_trajectories(ckpt, task, 0, opts, 3, path);

  std::ifstream is(path);
  std::string line;
  int lines = 0;
  while (std::getline(is, line)) ++lines;
  CHECK(lines == 1);
  std::remove(path.c_str());
}

TEST_CASE("export round-trips the requested episode count") {
  auto suite = register_default_suite(10);
  const TaskSpec& task = find_task(suite, "point_reach");
  Checkpoint ckpt = fresh_checkpoint();
  std::string path = "test_traj.csv";
  EvalOptions opts;
  opts.exec_horizon = 4;
  opts.ddim_steps = 5;
  export_trajectories(ckpt, task, 3, opts, 3, path);

  std::ifstream is(path);
  std::string line;
  std::getline(is, line);
  CHECK(line ==
        "episode,t,s0,s1,s2,s3,a0,a1,reward,success");
  std::set<std::string> episodes;
  int rows = 0;
  while (std::getline(is, line)) {
    episodes.insert(line.substr(0, line.find(',')));
    ++rows;
  }
  CHECK(episodes.size() == 3);
  CHECK(rows == 3 * 10);
  std::remove(path.c_str());
}

TEST_CASE("ablation report rejects empty input") {
  CHECK_THROWS_AS(ablation_report({}, "out.txt"), std::invalid_argument);
}

TEST_CASE("ablation report summarizes metrics files") {
  // Minimal synthetic fine-tuning metrics file.
  std::string m1 = "test_report_m1.csv";
  {
    std::ofstream os(m1);
    os << "# stage=finetune task=point_reach regularizer=bc seed=1\n";
    os << "episode,env_steps,mean_seg_reward,episode_return,rolling_success,"
          "loss_imp,loss_reg,mean_rho,clip_fraction\n";
    os << "0,50,-1,-10,0.25,,,,\n";
    os << "1,100,-0.5,-8,0.5,0.1,0.2,1,0\n";
  }

  SUBCASE("single file gives a single detail row") {
    ablation_report({m1}, "test_report.txt");
    std::ifstream is("test_report.txt");
    std::string text((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("point_reach") != std::string::npos);
    CHECK(text.find("0.5000") != std::string::npos);
    std::remove("test_report.txt");
  }

  SUBCASE("duplicated file gives identical detail rows") {
    ablation_report({m1, m1}, "test_report2.txt");
    std::ifstream is("test_report2.txt");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(is, line)) lines.push_back(line);
    int count = 0;
    for (size_t i = 0; i + 1 < lines.size(); ++i)
      if (lines[i] == lines[i + 1] &&
          lines[i].find("point_reach") != std::string::npos)
        ++count;
    CHECK(count >= 1);
    std::remove("test_report2.txt");
  }

  std::remove(m1.c_str());
}
