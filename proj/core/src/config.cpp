#include "diffplan/config.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "diffplan/errors.hpp"

namespace diffplan {

using nlohmann::json;

Config::Config() {
  set_value("diffusion.schedule", std::string("cosine"));
  set_value("diffusion.K", 100.0);
  set_value("diffusion.beta_start", 1e-4);
  set_value("diffusion.beta_end", 0.02);

  set_value("net.hidden_layers", 3.0);
  set_value("net.hidden_width", 256.0);
  set_value("net.time_embed_dim", 32.0);
  set_value("net.plan_horizon", 12.0);  // H
  set_value("net.obs_horizon", 2.0);    // T_o

  set_value("env.suite", std::string("default"));
  set_value("env.episode_len", 50.0);

  set_value("pretrain.steps", 20000.0);
  set_value("pretrain.batch_size", 256.0);
  set_value("pretrain.lr", 1e-4);
  set_value("pretrain.log_interval", 100.0);
  set_value("pretrain.eval_interval", 0.0);  // 0 disables periodic eval
  set_value("pretrain.eval_episodes", 20.0);

  set_value("finetune.env_steps", 60000.0);
  set_value("finetune.exec_horizon", 8.0);  // T_a
  set_value("finetune.ddim_steps", 10.0);
  set_value("finetune.eta", 1.0);
  set_value("finetune.sigma_floor", 0.05);
  set_value("finetune.clip_eps", 0.2);
  set_value("finetune.lambda", 1.0);
  set_value("finetune.gamma", 1.0);
  set_value("finetune.p_step", 10.0);
  set_value("finetune.n_init", 10.0);
  set_value("finetune.regularizer", std::string("bc"));
  set_value("finetune.lr", 1e-5);
  set_value("finetune.lr_decay", 0.9999);
  set_value("finetune.lr_floor_frac", 0.1);
  set_value("finetune.batch_size", 64.0);
  set_value("finetune.target_capacity", 50.0);
  set_value("finetune.replay_capacity", 4096.0);
  set_value("finetune.reward_transform", std::string("standardize"));
  set_value("finetune.success_window", 50.0);
}

void Config::set_value(const std::string& key, Value v) {
  values_[key] = std::move(v);
}

namespace {

void flatten(const json& j, const std::string& prefix,
             std::vector<std::pair<std::string, json>>& out) {
  if (j.is_object()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
      flatten(it.value(), key, out);
    }
  } else {
    out.emplace_back(prefix, j);
  }
}

Config::Value to_value(const std::string& key, const json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_boolean()) return j.get<bool>();
  if (j.is_string()) return j.get<std::string>();
  throw ConfigError("config key '" + key + "' has unsupported value type");
}

}  // namespace

Config Config::from_file(const std::string& path) {
  Config cfg;
  cfg.load_file(path);
  return cfg;
}

void Config::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be an object");

  std::vector<std::pair<std::string, json>> flat;
  flatten(j, "", flat);
  for (auto& [key, val] : flat) {
    if (!values_.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    set_value(key, to_value(key, val));
  }
}

void Config::set(const std::string& key, const std::string& value) {
  if (!values_.count(key)) throw ConfigError("config: unknown key '" + key + "'");
  json j = json::parse(value, nullptr, false);
  if (j.is_discarded() || j.is_object() || j.is_array())
    set_value(key, value);  // plain string
  else
    set_value(key, to_value(key, j));
}

bool Config::has(const std::string& key) const { return values_.count(key) > 0; }

double Config::get_double(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  if (auto* d = std::get_if<double>(&it->second)) return *d;
  throw ConfigError("config key '" + key + "' is not numeric");
}

int Config::get_int(const std::string& key) const {
  double d = get_double(key);
  double r = std::round(d);
  if (std::abs(d - r) > 1e-9)
    throw ConfigError("config key '" + key + "' is not an integer");
  return static_cast<int>(r);
}

bool Config::get_bool(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  if (auto* b = std::get_if<bool>(&it->second)) return *b;
  throw ConfigError("config key '" + key + "' is not boolean");
}

std::string Config::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: unknown key '" + key + "'");
  if (auto* s = std::get_if<std::string>(&it->second)) return *s;
  throw ConfigError("config key '" + key + "' is not a string");
}

void Config::validate() const {
  auto require = [&](bool ok, const std::string& key, const std::string& why) {
    if (!ok) throw ConfigError("config key '" + key + "': " + why);
  };

  std::string sched = get_string("diffusion.schedule");
  require(sched == "cosine" || sched == "linear", "diffusion.schedule",
          "must be 'cosine' or 'linear'");
  require(get_int("diffusion.K") >= 1, "diffusion.K", "must be >= 1");
  if (sched == "linear") {
    double bs = get_double("diffusion.beta_start");
    double be = get_double("diffusion.beta_end");
    require(bs > 0 && bs < 1, "diffusion.beta_start", "must be in (0, 1)");
    require(be > 0 && be < 1, "diffusion.beta_end", "must be in (0, 1)");
  }

  require(get_int("net.hidden_layers") >= 1, "net.hidden_layers", "must be >= 1");
  require(get_int("net.hidden_width") >= 1, "net.hidden_width", "must be >= 1");
  int e = get_int("net.time_embed_dim");
  require(e >= 2 && e % 2 == 0, "net.time_embed_dim", "must be even and >= 2");
  require(get_int("net.plan_horizon") >= 1, "net.plan_horizon", "must be >= 1");
  require(get_int("net.obs_horizon") >= 1, "net.obs_horizon", "must be >= 1");

  require(get_int("env.episode_len") >= 1, "env.episode_len", "must be >= 1");

  require(get_int("pretrain.steps") >= 0, "pretrain.steps", "must be >= 0");
  require(get_int("pretrain.batch_size") >= 1, "pretrain.batch_size",
          "must be >= 1");
  require(get_double("pretrain.lr") > 0, "pretrain.lr", "must be > 0");
  require(get_int("pretrain.log_interval") >= 1, "pretrain.log_interval",
          "must be >= 1");

  int K = get_int("diffusion.K");
  int ddim = get_int("finetune.ddim_steps");
  require(ddim >= 1 && ddim <= K, "finetune.ddim_steps", "must be in [1, K]");
  require(get_double("finetune.eta") >= 0, "finetune.eta", "must be >= 0");
  require(get_double("finetune.sigma_floor") >= 0, "finetune.sigma_floor",
          "must be >= 0");
  require(get_double("finetune.clip_eps") > 0, "finetune.clip_eps",
          "must be > 0");
  require(get_double("finetune.lambda") >= 0, "finetune.lambda", "must be >= 0");
  double gamma = get_double("finetune.gamma");
  require(gamma > 0 && gamma <= 1, "finetune.gamma", "must be in (0, 1]");
  int ta = get_int("finetune.exec_horizon");
  require(ta >= 1 && ta <= get_int("net.plan_horizon"), "finetune.exec_horizon",
          "must be in [1, net.plan_horizon]");
  require(get_int("finetune.p_step") >= 1, "finetune.p_step", "must be >= 1");
  require(get_int("finetune.n_init") >= 1, "finetune.n_init", "must be >= 1");
  require(get_double("finetune.lr") > 0, "finetune.lr", "must be > 0");
  double decay = get_double("finetune.lr_decay");
  require(decay > 0 && decay <= 1, "finetune.lr_decay", "must be in (0, 1]");
  require(get_int("finetune.batch_size") >= 1, "finetune.batch_size",
          "must be >= 1");
  require(get_int("finetune.target_capacity") >= 1, "finetune.target_capacity",
          "must be >= 1");
  require(get_int("finetune.env_steps") >= 0, "finetune.env_steps",
          "must be >= 0");
  require(get_int("finetune.success_window") >= 1, "finetune.success_window",
          "must be >= 1");
  std::string reg = get_string("finetune.regularizer");
  require(reg == "bc" || reg == "none" || reg == "kl" || reg == "pl",
          "finetune.regularizer", "must be one of bc|none|kl|pl");
  std::string rt = get_string("finetune.reward_transform");
  require(rt == "standardize" || rt == "raw", "finetune.reward_transform",
          "must be 'standardize' or 'raw'");
}

}  // namespace diffplan
