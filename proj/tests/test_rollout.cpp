#include <doctest.h>

#include "diffplan/rollout.hpp"

using namespace diffplan;

TEST_CASE("state history pads by repeating the first state") {
  StateHistoryBuffer buf(3, 2);
  Vec s(2);
  s << 0.5, -0.5;
  buf.push(s);
  StateHistory h = buf.history();
  REQUIRE(h.rows() == 3);
  for (int r = 0; r < 3; ++r) {
    CHECK(h(r, 0) == 0.5);
    CHECK(h(r, 1) == -0.5);
  }

  Vec s2(2);
  s2 << 1.0, 2.0;
  buf.push(s2);
  h = buf.history();
  CHECK(h(0, 0) == 0.5);  // repeated oldest
  CHECK(h(1, 0) == 0.5);
  CHECK(h(2, 0) == 1.0);  // most recent last
}

TEST_CASE("state history zero-pads narrow states") {
  StateHistoryBuffer buf(2, 4);
  Vec s(2);
  s << 0.3, 0.7;
  buf.push(s);
  StateHistory h = buf.history();
  CHECK(h(1, 0) == 0.3);
  CHECK(h(1, 2) == 0.0);
  CHECK(h(1, 3) == 0.0);
}

TEST_CASE("episode runner executes exec_horizon actions per plan") {
  auto suite = register_default_suite(10);
  const TaskSpec& spec = find_task(suite, "point_reach");

  int calls = 0;
  PlannerFn planner = [&](const StateHistory& h) {
    ++calls;
    CHECK(h.rows() == 2);
    return Mat::Zero(4, 2);
  };
  EpisodeResult res = run_episode(spec, 3, planner, 2, 4, 4);
  CHECK(res.steps == 10);
  CHECK(calls == 3);  // ceil(10 / 4)
}

TEST_CASE("episode runner records traces when asked") {
  auto suite = register_default_suite(6);
  const TaskSpec& spec = find_task(suite, "point_reach");
  PlannerFn planner = [](const StateHistory&) {
    return Mat::Constant(2, 2, 0.1);
  };
  EpisodeResult res = run_episode(spec, 3, planner, 1, 4, 2, true);
  CHECK(res.trace.size() == 6);
  double sum = 0;
  for (const auto& es : res.trace) sum += es.reward;
  CHECK(sum == doctest::Approx(res.episode_return));
}
