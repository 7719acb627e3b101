#include "diffplan/dataset.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "diffplan/errors.hpp"

namespace diffplan {

namespace {

void write_f64_le(std::ostream& os, double v) {
  uint64_t u = std::bit_cast<uint64_t>(v);
  unsigned char bytes[8];
  for (int b = 0; b < 8; ++b)
    bytes[b] = static_cast<unsigned char>((u >> (8 * b)) & 0xFF);
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_f64_le(std::istream& is) {
  unsigned char bytes[8];
  is.read(reinterpret_cast<char*>(bytes), 8);
  if (!is) throw std::runtime_error("dataset: truncated record payload");
  uint64_t u = 0;
  for (int b = 0; b < 8; ++b) u |= static_cast<uint64_t>(bytes[b]) << (8 * b);
  return std::bit_cast<double>(u);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

Dataset Dataset::generate(const std::vector<TaskSpec>& suite,
                          int episodes_per_task, double noise_level,
                          uint64_t seed) {
  if (suite.empty()) throw std::invalid_argument("generate: empty suite");
  if (episodes_per_task < 1)
    throw std::invalid_argument("generate: episodes_per_task must be >= 1");
  if (noise_level < 0.0 || noise_level > 1.0)
    throw std::invalid_argument("generate: noise_level must be in [0, 1]");

  Dataset ds;
  ds.action_dim_ = suite.front().action_dim;
  for (const auto& spec : suite) {
    ds.state_dim_ = std::max(ds.state_dim_, spec.state_dim);
    ds.task_ids_.push_back(spec.task_id);
  }

  RngStream master(seed);
  int episode_id = 0;
  for (size_t ti = 0; ti < suite.size(); ++ti) {
    const TaskSpec& spec = suite[ti];
    RngStream task_rng = master.split(ti + 1);
    int successes = 0;
    double return_sum = 0.0;

    for (int ep = 0; ep < episodes_per_task; ++ep) {
      uint64_t ep_seed = task_rng.next_u64();
      RngStream noise_rng = task_rng.split(ep + 1);
      EnvState env = reset(spec, ep_seed);
      double ep_return = 0.0;
      int t = 0;
      // The noise draw is held for a few steps so the perturbation is
      // temporally coherent, like an exploring agent rather than jitter.
      constexpr int kNoiseHoldSteps = 8;
      Eigen::Vector2d u{0.0, 0.0};
      while (!env.done) {
        Eigen::Vector2d ctrl = scripted_action(env);
        if (t % kNoiseHoldSteps == 0)
          u = {noise_rng.uniform(-1.0, 1.0), noise_rng.uniform(-1.0, 1.0)};
        Eigen::Vector2d a = (1.0 - noise_level) * ctrl + noise_level * u;

        TransitionRecord rec;
        rec.task_index = static_cast<int>(ti);
        rec.episode_id = episode_id;
        rec.t = t;
        rec.s = Vec::Zero(ds.state_dim_);
        rec.s.head(spec.state_dim) = env.s;
        rec.a = a;

        StepResult res = step(env, a);
        rec.r = res.reward;
        rec.s_next = Vec::Zero(ds.state_dim_);
        rec.s_next.head(spec.state_dim) = env.s;
        rec.done = res.done;
        rec.success = res.success;
        ds.records_.push_back(std::move(rec));

        ep_return += res.reward;
        ++t;
      }
      if (env.success) ++successes;
      return_sum += ep_return;
      ++episode_id;
    }

    TaskSummary sum;
    sum.task_id = spec.task_id;
    sum.episodes = episodes_per_task;
    sum.success_rate = static_cast<double>(successes) / episodes_per_task;
    sum.mean_return = return_sum / episodes_per_task;
    ds.summaries_.push_back(sum);
  }

  ds.rebuild_index();
  return ds;
}

void Dataset::rebuild_index() {
  episodes_.clear();
  size_t i = 0;
  while (i < records_.size()) {
    size_t start = i;
    int ep = records_[i].episode_id;
    while (i < records_.size() && records_[i].episode_id == ep) ++i;
    episodes_.push_back({start, i - start});
  }
}

void Dataset::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("dataset: cannot open " + path);

  os << "DIFFPLAN-DATASET 1 S=" << state_dim_ << " A=" << action_dim_
     << " RECORDS=" << records_.size() << " TASKS=";
  for (size_t i = 0; i < task_ids_.size(); ++i) {
    if (i) os << ",";
    os << task_ids_[i];
  }
  os << "\n";

  // Per record, f64 fields in order:
  //   task_index, episode_id, t, s[S], a[A], r, s_next[S], done, success
  for (const auto& rec : records_) {
    write_f64_le(os, rec.task_index);
    write_f64_le(os, rec.episode_id);
    write_f64_le(os, rec.t);
    for (int i = 0; i < state_dim_; ++i) write_f64_le(os, rec.s[i]);
    for (int i = 0; i < action_dim_; ++i) write_f64_le(os, rec.a[i]);
    write_f64_le(os, rec.r);
    for (int i = 0; i < state_dim_; ++i) write_f64_le(os, rec.s_next[i]);
    write_f64_le(os, rec.done ? 1.0 : 0.0);
    write_f64_le(os, rec.success ? 1.0 : 0.0);
  }
  if (!os) throw std::runtime_error("dataset: write failed for " + path);

  std::ofstream ms(path + ".manifest");
  if (!ms) throw std::runtime_error("dataset: cannot open manifest");
  for (const auto& sum : summaries_) {
    ms << "task=" << sum.task_id << " episodes=" << sum.episodes
       << " success_rate=" << format_double(sum.success_rate)
       << " mean_return=" << format_double(sum.mean_return) << "\n";
  }
}

Dataset Dataset::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("dataset: cannot open " + path);

  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("dataset: missing header");
  std::istringstream hs(line);
  std::string magic;
  int version = 0;
  hs >> magic >> version;
  if (magic != "DIFFPLAN-DATASET" || version != 1)
    throw std::runtime_error("dataset: bad magic/version in " + path);

  Dataset ds;
  size_t n_records = 0;
  std::string tok;
  while (hs >> tok) {
    auto eq = tok.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("dataset: malformed header token " + tok);
    std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "S") ds.state_dim_ = std::stoi(val);
    else if (key == "A") ds.action_dim_ = std::stoi(val);
    else if (key == "RECORDS") n_records = std::stoul(val);
    else if (key == "TASKS") {
      std::istringstream ts(val);
      std::string id;
      while (std::getline(ts, id, ',')) ds.task_ids_.push_back(id);
    } else {
      throw std::runtime_error("dataset: unknown header key " + key);
    }
  }
  if (ds.state_dim_ < 1 || ds.action_dim_ < 1)
    throw std::runtime_error("dataset: bad dims in header");

  ds.records_.reserve(n_records);
  for (size_t i = 0; i < n_records; ++i) {
    TransitionRecord rec;
    rec.task_index = static_cast<int>(read_f64_le(is));
    rec.episode_id = static_cast<int>(read_f64_le(is));
    rec.t = static_cast<int>(read_f64_le(is));
    rec.s = Vec(ds.state_dim_);
    for (int j = 0; j < ds.state_dim_; ++j) rec.s[j] = read_f64_le(is);
    rec.a = Vec(ds.action_dim_);
    for (int j = 0; j < ds.action_dim_; ++j) rec.a[j] = read_f64_le(is);
    rec.r = read_f64_le(is);
    rec.s_next = Vec(ds.state_dim_);
    for (int j = 0; j < ds.state_dim_; ++j) rec.s_next[j] = read_f64_le(is);
    rec.done = read_f64_le(is) != 0.0;
    rec.success = read_f64_le(is) != 0.0;
    ds.records_.push_back(std::move(rec));
  }
  ds.rebuild_index();
  return ds;
}

TrainingWindow Dataset::sample_window(int obs_horizon, int plan_horizon,
                                      RngStream& rng) const {
  if (records_.empty()) throw UnavailableError("sample_window: empty dataset");
  if (obs_horizon < 1 || plan_horizon < 1)
    throw std::invalid_argument("sample_window: horizons must be >= 1");

  size_t idx = rng.index(records_.size());
  // Locate the episode span containing this record.
  size_t lo = 0, hi = episodes_.size();
  while (hi - lo > 1) {
    size_t mid = (lo + hi) / 2;
    if (episodes_[mid].start <= idx) lo = mid;
    else hi = mid;
  }
  const EpisodeSpan& span = episodes_[lo];
  int t = static_cast<int>(idx - span.start);
  int len = static_cast<int>(span.len);

  TrainingWindow w;
  w.task_index = records_[span.start].task_index;
  w.s_hist = StateHistory(obs_horizon, state_dim_);
  for (int i = 0; i < obs_horizon; ++i) {
    int src = std::max(0, t - obs_horizon + 1 + i);
    w.s_hist.row(i) = records_[span.start + src].s.transpose();
  }
  w.a_seq = ActionSequence(plan_horizon, action_dim_);
  for (int i = 0; i < plan_horizon; ++i) {
    int src = std::min(len - 1, t + i);
    w.a_seq.row(i) = records_[span.start + src].a.transpose();
  }
  return w;
}

std::vector<TrainingWindow> Dataset::sample_windows(int batch_size,
                                                    int obs_horizon,
                                                    int plan_horizon,
                                                    RngStream& rng) const {
  if (batch_size < 1)
    throw std::invalid_argument("sample_windows: batch_size must be >= 1");
  std::vector<TrainingWindow> out;
  out.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i)
    out.push_back(sample_window(obs_horizon, plan_horizon, rng));
  return out;
}

}  // namespace diffplan
