#include "sirsa/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace sirsa {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

json to_json(const PolicySpec& s) {
  return {{"algorithm", to_string(s.algorithm)},
          {"alpha", s.alpha},
          {"n_cvar", s.n_cvar},
          {"b_ensemble", s.b_ensemble},
          {"t_threshold", s.t_threshold},
          {"redq", s.redq},
          {"redq_m", s.redq_m},
          {"n_ens", s.n_ens},
          {"history", s.history}};
}

PolicySpec policy_from_json(const json& j) {
  const std::string w = "policy";
  reject_unknown(j, w, {"algorithm", "alpha", "n_cvar", "b_ensemble", "t_threshold", "redq", "redq_m",
                        "n_ens", "history"});
  PolicySpec s;
  if (j.contains("algorithm")) {
    try {
      s.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(w + ".algorithm: " + e.what());
    }
  }
  read(j, "alpha", s.alpha, w);
  read(j, "n_cvar", s.n_cvar, w);
  read(j, "b_ensemble", s.b_ensemble, w);
  read(j, "t_threshold", s.t_threshold, w);
  read(j, "redq", s.redq, w);
  read(j, "redq_m", s.redq_m, w);
  read(j, "n_ens", s.n_ens, w);
  read(j, "history", s.history, w);
  return s;
}

json to_json(const TrainConfig& t) {
  return {{"budget", t.budget},
          {"batch_size", t.batch_size},
          {"cvar_batch_size", t.cvar_batch_size},
          {"grad_steps_per_episode", t.grad_steps_per_episode},
          {"warmup_episodes", t.warmup_episodes},
          {"gamma", t.gamma},
          {"tau", t.tau},
          {"actor_lr", t.actor_lr},
          {"critic_lr", t.critic_lr},
          {"sysid_lr", t.sysid_lr},
          {"temperature_lr", t.temperature_lr},
          {"varnet_lr", t.varnet_lr},
          {"init_temperature", t.init_temperature},
          {"hidden", t.hidden},
          {"varnet_hidden", t.varnet_hidden},
          {"obs_scale", t.obs_scale},
          {"buffer_capacity", t.buffer_capacity},
          {"phase1_degenerate_prob", t.phase1_degenerate_prob},
          {"cvar_entropy", t.cvar_entropy},
          {"varnet_samples", t.varnet_samples},
          {"wcpg_literal_form", t.wcpg_literal_form},
          {"checkpoint_every", t.checkpoint_every},
          {"log_every_episodes", t.log_every_episodes}};
}

TrainConfig train_from_json(const json& j) {
  const std::string w = "train";
  reject_unknown(j, w, {"budget", "batch_size", "cvar_batch_size", "grad_steps_per_episode",
                        "warmup_episodes", "gamma", "tau", "actor_lr", "critic_lr", "sysid_lr",
                        "temperature_lr", "varnet_lr", "init_temperature", "hidden", "varnet_hidden",
                        "obs_scale", "buffer_capacity", "phase1_degenerate_prob", "cvar_entropy",
                        "varnet_samples", "wcpg_literal_form", "checkpoint_every", "log_every_episodes"});
  TrainConfig t;
  read(j, "budget", t.budget, w);
  read(j, "batch_size", t.batch_size, w);
  read(j, "cvar_batch_size", t.cvar_batch_size, w);
  read(j, "grad_steps_per_episode", t.grad_steps_per_episode, w);
  read(j, "warmup_episodes", t.warmup_episodes, w);
  read(j, "gamma", t.gamma, w);
  read(j, "tau", t.tau, w);
  read(j, "actor_lr", t.actor_lr, w);
  read(j, "critic_lr", t.critic_lr, w);
  read(j, "sysid_lr", t.sysid_lr, w);
  read(j, "temperature_lr", t.temperature_lr, w);
  read(j, "varnet_lr", t.varnet_lr, w);
  read(j, "init_temperature", t.init_temperature, w);
  read(j, "hidden", t.hidden, w);
  read(j, "varnet_hidden", t.varnet_hidden, w);
  read(j, "obs_scale", t.obs_scale, w);
  read(j, "buffer_capacity", t.buffer_capacity, w);
  read(j, "phase1_degenerate_prob", t.phase1_degenerate_prob, w);
  read(j, "cvar_entropy", t.cvar_entropy, w);
  read(j, "varnet_samples", t.varnet_samples, w);
  read(j, "wcpg_literal_form", t.wcpg_literal_form, w);
  read(j, "checkpoint_every", t.checkpoint_every, w);
  read(j, "log_every_episodes", t.log_every_episodes, w);
  return t;
}

void RunConfig::validate() const {
  try {
    policy.validate();
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (train.budget < policy.t_threshold) throw ConfigError("train.budget must be >= policy.t_threshold");
  if (env.horizon < 1) throw ConfigError("env.horizon must be positive");
  if (!(env.a_max > 0.0)) throw ConfigError("env.a_max must be positive");
  if (!(suite.width_fraction > 0.0 && suite.width_fraction <= 1.0)) {
    throw ConfigError("suite.width_fraction must lie in (0, 1]");
  }
  if (suite.n_train_sets < 1 || suite.contexts_per_set < 1 || suite.n_test_sets < 1) {
    throw ConfigError("suite counts must be positive");
  }
  if (seeds.empty()) throw ConfigError("seeds must not be empty");
  if (jobs < 1) throw ConfigError("jobs must be positive");
  if (eval.K < 1) throw ConfigError("eval.K must be positive");
  if (eval.r_levels.empty()) throw ConfigError("eval.r_levels must not be empty");
  if (eval.period < 1 || eval.horizon < 1 || eval.horizon % eval.period != 0) {
    throw ConfigError("eval.period must divide eval.horizon");
  }
  if (eval.n_rollouts < 1 || eval.gap_rollouts < 1 || eval.id_error_k < 1) {
    throw ConfigError("eval rollout counts must be positive");
  }
  for (double a : eval.wcpg_alphas) {
    if (!(a > 0.0 && a <= 1.0)) throw ConfigError("eval.wcpg_alphas entries must lie in (0, 1]");
  }
}

RunConfig config_from_json(const json& j) {
  reject_unknown(j, "config", {"env", "suite", "policy", "train", "seeds", "out_dir", "jobs", "eval"});
  RunConfig c;
  if (j.contains("env")) {
    const auto& e = j.at("env");
    reject_unknown(e, "env", {"variant", "horizon", "a_max", "start_x", "start_y"});
    if (e.contains("variant")) {
      try {
        c.env.variant = variant_from_string(e.at("variant").get<std::string>());
      } catch (const std::exception& ex) {
        throw ConfigError(std::string("env.variant: ") + ex.what());
      }
    }
    read(e, "horizon", c.env.horizon, "env");
    read(e, "a_max", c.env.a_max, "env");
    read(e, "start_x", c.env.start_x, "env");
    read(e, "start_y", c.env.start_y, "env");
  }
  if (j.contains("suite")) {
    const auto& s = j.at("suite");
    reject_unknown(s, "suite", {"seed", "n_train_sets", "contexts_per_set", "n_test_sets", "width_fraction"});
    read(s, "seed", c.suite.seed, "suite");
    read(s, "n_train_sets", c.suite.n_train_sets, "suite");
    read(s, "contexts_per_set", c.suite.contexts_per_set, "suite");
    read(s, "n_test_sets", c.suite.n_test_sets, "suite");
    read(s, "width_fraction", c.suite.width_fraction, "suite");
  }
  if (j.contains("policy")) c.policy = policy_from_json(j.at("policy"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  read(j, "seeds", c.seeds, "config");
  read(j, "out_dir", c.out_dir, "config");
  read(j, "jobs", c.jobs, "config");
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    reject_unknown(e, "eval", {"K", "r_levels", "period", "horizon", "n_rollouts", "wcpg_alphas",
                               "gap_rollouts", "id_error_k"});
    read(e, "K", c.eval.K, "eval");
    read(e, "r_levels", c.eval.r_levels, "eval");
    read(e, "period", c.eval.period, "eval");
    read(e, "horizon", c.eval.horizon, "eval");
    read(e, "n_rollouts", c.eval.n_rollouts, "eval");
    read(e, "wcpg_alphas", c.eval.wcpg_alphas, "eval");
    read(e, "gap_rollouts", c.eval.gap_rollouts, "eval");
    read(e, "id_error_k", c.eval.id_error_k, "eval");
  }
  c.validate();
  return c;
}

json to_json(const RunConfig& c) {
  return {{"env",
           {{"variant", to_string(c.env.variant)},
            {"horizon", c.env.horizon},
            {"a_max", c.env.a_max},
            {"start_x", c.env.start_x},
            {"start_y", c.env.start_y}}},
          {"suite",
           {{"seed", c.suite.seed},
            {"n_train_sets", c.suite.n_train_sets},
            {"contexts_per_set", c.suite.contexts_per_set},
            {"n_test_sets", c.suite.n_test_sets},
            {"width_fraction", c.suite.width_fraction}}},
          {"policy", to_json(c.policy)},
          {"train", to_json(c.train)},
          {"seeds", c.seeds},
          {"out_dir", c.out_dir},
          {"jobs", c.jobs},
          {"eval",
           {{"K", c.eval.K},
            {"r_levels", c.eval.r_levels},
            {"period", c.eval.period},
            {"horizon", c.eval.horizon},
            {"n_rollouts", c.eval.n_rollouts},
            {"wcpg_alphas", c.eval.wcpg_alphas},
            {"gap_rollouts", c.eval.gap_rollouts},
            {"id_error_k", c.eval.id_error_k}}}};
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_env_overrides(RunConfig& c) {
  if (const char* d = std::getenv("SIRSA_OUT_DIR"); d != nullptr && *d != '\0') c.out_dir = d;
  if (const char* n = std::getenv("SIRSA_JOBS"); n != nullptr && *n != '\0') {
    try {
      c.jobs = std::stoi(n);
    } catch (const std::exception&) {
      throw ConfigError("SIRSA_JOBS must be an integer");
    }
    if (c.jobs < 1) throw ConfigError("SIRSA_JOBS must be positive");
  }
}

std::string config_hash(const RunConfig& c) {
  const auto full = to_json(c);
  const json shaping = {{"env", full.at("env")},
                        {"suite", full.at("suite")},
                        {"policy", full.at("policy")},
                        {"train", full.at("train")}};
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(shaping.dump());
  return os.str();
}

PointMassEnv make_env(const RunConfig& c) { return PointMassEnv(c.env); }

TaskSuite build_suite(const RunConfig& c) {
  const auto env = make_env(c);
  const SetDistribution dist{env.context_space(), c.suite.width_fraction};
  Rng rng(c.suite.seed);
  return make_task_suite(dist, c.suite.n_train_sets, c.suite.contexts_per_set, c.suite.n_test_sets, rng);
}

TrainedRun train_run(const RunConfig& c, const TaskSuite& suite, std::uint64_t seed,
                     const std::function<void(const Trainer&, long)>& on_checkpoint) {
  Trainer trainer(c.policy, c.train, suite, make_env(c), seed);
  std::function<void(long)> cb;
  if (on_checkpoint) cb = [&](long it) { on_checkpoint(trainer, it); };
  TrainedRun out;
  out.stats = trainer.run(cb);
  out.model = trainer.model();
  out.seed = seed;
  return out;
}

std::vector<double> eval_alphas(const RunConfig& c, const AgentModel& model) {
  const auto kind = model.conditioning();
  if (kind == Conditioning::kAlpha || kind == Conditioning::kAlphaSet) return c.eval.wcpg_alphas;
  return {1.0};
}

std::vector<EvalReport> evaluate_model(const RunConfig& c, const AgentModel& model, const TaskSuite& suite,
                                       std::uint64_t seed, int jobs) {
  const auto env = make_env(c);
  const auto kind = model.conditioning();
  const bool labelled = kind == Conditioning::kAlpha || kind == Conditioning::kAlphaSet;
  std::vector<EvalReport> out;
  for (double a : eval_alphas(c, model)) {
    RuntimeOptions opt;
    opt.wcpg_alpha = a;
    const PolicyFactory factory = [&model, opt] { return std::make_unique<AgentRuntime>(model, opt); };
    auto r = evaluate_test_suite(env, factory, suite, c.eval.K, derive_seed(seed, 0xE7A1), jobs);
    r.seed = seed;
    r.method = to_string(model.spec.algorithm);
    if (labelled) {
      std::ostringstream os;
      os << "alpha=" << std::fixed << std::setprecision(2) << a;
      r.label = os.str();
    }
    r.config_hash = config_hash(c);
    out.push_back(std::move(r));
  }
  return out;
}

const EvalReport& best_report(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("best_report: no reports");
  std::size_t best = 0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    if (reports[i].mean_of_mins > reports[best].mean_of_mins) best = i;
  }
  return reports[best];
}

void write_train_log(const TrainStats& stats, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << std::setprecision(10);
  f << "iteration,episode,phase,critic_loss,actor_loss,sysid_loss,varnet_loss,temperature,episode_return\n";
  for (const auto& r : stats.log) {
    f << r.iteration << ',' << r.episode << ',' << r.phase << ',' << r.critic_loss << ',' << r.actor_loss
      << ',' << r.sysid_loss << ',' << r.varnet_loss << ',' << r.temperature << ',' << r.episode_return
      << '\n';
  }
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

}  // namespace sirsa
