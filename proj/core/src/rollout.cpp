#include "diffplan/rollout.hpp"

#include <stdexcept>

namespace diffplan {

StateHistoryBuffer::StateHistoryBuffer(int obs_horizon, int state_dim)
    : obs_horizon_(obs_horizon), state_dim_(state_dim) {
  if (obs_horizon < 1 || state_dim < 1)
    throw std::invalid_argument("state history: bad dimensions");
}

void StateHistoryBuffer::push(const Vec& state) {
  if (state.size() > state_dim_)
    throw std::invalid_argument("state history: state wider than planner dim");
  Vec padded = Vec::Zero(state_dim_);
  padded.head(state.size()) = state;
  states_.push_back(std::move(padded));
  while (states_.size() > static_cast<size_t>(obs_horizon_))
    states_.pop_front();
}

StateHistory StateHistoryBuffer::history() const {
  if (states_.empty())
    throw std::logic_error("state history: empty, push a state first");
  StateHistory h(obs_horizon_, state_dim_);
  int pad = obs_horizon_ - static_cast<int>(states_.size());
  for (int i = 0; i < obs_horizon_; ++i) {
    const Vec& src = i < pad ? states_.front() : states_[i - pad];
    h.row(i) = src.transpose();
  }
  return h;
}

void StateHistoryBuffer::clear() { states_.clear(); }

PlannerFn make_diffusion_planner(const DenoiserParams& params,
                                 const SamplerPlan& plan, RngStream* rng) {
  return [&params, &plan, rng](const StateHistory& s_hist) {
    return sample_action_sequence(params, s_hist, plan, *rng);
  };
}

EpisodeResult run_episode(const TaskSpec& spec, uint64_t seed,
                          const PlannerFn& planner, int obs_horizon,
                          int planner_state_dim, int exec_horizon,
                          bool record_steps) {
  EnvState env = reset(spec, seed);
  StateHistoryBuffer hist(obs_horizon, planner_state_dim);
  hist.push(env.s);

  EpisodeResult out;
  while (!env.done) {
    ActionSequence seq = planner(hist.history());
    for (int i = 0; i < exec_horizon && !env.done; ++i) {
      Eigen::Vector2d a = seq.row(i).head<2>();
      Vec state_before = env.s;
      StepResult res = step(env, a);
      hist.push(env.s);
      out.episode_return += res.reward;
      out.steps += 1;
      if (record_steps) {
        EpisodeStep es;
        es.state = state_before;
        es.action = a;
        es.reward = res.reward;
        es.success = res.success;
        out.trace.push_back(std::move(es));
      }
    }
  }
  out.success = env.success;
  return out;
}

}  // namespace diffplan
