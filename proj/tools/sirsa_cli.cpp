// sirsa: suite generation, training, evaluation and sweeps from one JSON config.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sirsa/experiment.hpp"

namespace fs = std::filesystem;
using namespace sirsa;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Options {
  std::string config;
  std::string suite;
  std::string checkpoint;
  std::string seeds;
  std::string protocols = "suite";
  std::string out;
  std::string axis;
  std::string values;
  int jobs = 0;
  bool allow_mismatch = false;
};

template <typename T>
std::vector<T> parse_csv(const std::string& s, const char* what) {
  std::vector<T> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::istringstream is(item);
    T v{};
    if (!(is >> v) || !is.eof()) throw ConfigError(std::string("bad value '") + item + "' in --" + what);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string("--") + what + " is empty");
  return out;
}

RunConfig resolve_config(const Options& o) {
  if (o.config.empty()) throw ConfigError("--config is required");
  RunConfig c = load_config(o.config);
  apply_env_overrides(c);
  if (!o.seeds.empty()) c.seeds = parse_csv<std::uint64_t>(o.seeds, "seeds");
  if (o.jobs > 0) c.jobs = o.jobs;
  if (!o.out.empty()) c.out_dir = o.out;
  c.validate();
  return c;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "'");
  nlohmann::json j;
  f >> j;
  return j;
}

void write_json(const nlohmann::json& j, const fs::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << j.dump(1) << '\n';
  if (!f) throw std::runtime_error("write to '" + path.string() + "' failed");
}

TaskSuite load_suite(const Options& o, const RunConfig& c) {
  if (o.suite.empty()) return build_suite(c);
  TaskSuite s = suite_from_json(read_json(o.suite));
  if (!s.test_sets.empty() && s.test_sets.front().dim() != make_env(c).context_dim()) {
    throw ConfigError("suite dimension does not match env.variant");
  }
  return s;
}

fs::path run_dir(const RunConfig& c, std::uint64_t seed) {
  return fs::path(c.out_dir) / to_string(c.policy.algorithm) / ("seed_" + std::to_string(seed));
}

int cmd_suite(const Options& o) {
  const RunConfig c = resolve_config(o);
  const TaskSuite s = build_suite(c);
  fs::create_directories(c.out_dir);
  const fs::path path = fs::path(c.out_dir) / "suite.json";
  write_json(to_json(s), path);
  const auto space = make_env(c).context_space();
  std::cout << "suite: " << s.train_sets.size() << " train sets x " << c.suite.contexts_per_set
            << " contexts, " << s.test_sets.size() << " test sets\n";
  for (Eigen::Index i = 0; i < space.dim(); ++i) {
    std::cout << "  dim " << i << ": [" << space.lower[i] << ", " << space.upper[i] << "]\n";
  }
  std::cout << "wrote " << path.string() << '\n';
  return kOk;
}

int cmd_train(const Options& o) {
  const RunConfig c = resolve_config(o);
  const TaskSuite suite = load_suite(o, c);
  const std::string hash = config_hash(c);
  for (auto seed : c.seeds) {
    const fs::path dir = run_dir(c, seed);
    fs::create_directories(dir);
    write_json(to_json(c), dir / "config.json");
    const auto save = [&](const Trainer& t, long it) {
      write_json(checkpoint_to_json(t.model(), hash, it, nullptr), dir / "checkpoint.json");
    };
    const auto t0 = std::chrono::steady_clock::now();
    TrainedRun run;
    try {
      run = train_run(c, suite, seed, save);
    } catch (const std::runtime_error& e) {
      std::cerr << "seed " << seed << ": training aborted: " << e.what() << '\n';
      return kRuntimeError;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_json(checkpoint_to_json(run.model, hash, run.stats.iterations, nullptr), dir / "checkpoint.json");
    write_train_log(run.stats, (dir / "train_log.csv").string());
    std::cout << to_string(c.policy.algorithm) << " seed " << seed << ": " << run.stats.iterations
              << " steps, " << run.stats.episodes << " episodes, " << secs << " s -> " << dir.string()
              << '\n';
  }
  return kOk;
}

AgentModel load_checkpoint(const std::string& path, const RunConfig& c, bool allow_mismatch) {
  const auto j = read_json(path);
  const auto stored = j.at("config_hash").get<std::string>();
  if (stored != config_hash(c)) {
    std::cerr << "warning: checkpoint " << path << " was trained with config " << stored
              << ", current config is " << config_hash(c) << '\n';
    if (!allow_mismatch) throw ConfigError("config hash mismatch (pass --allow-mismatch to proceed)");
  }
  return agent_from_checkpoint(j);
}

int cmd_eval(const Options& o) {
  const RunConfig c = resolve_config(o);
  const TaskSuite suite = load_suite(o, c);
  const auto env = make_env(c);
  const auto protos = parse_csv<std::string>(o.protocols, "protocols");
  const auto enabled = [&](const char* p) { return std::find(protos.begin(), protos.end(), p) != protos.end(); };
  for (const auto& p : protos) {
    if (p != "suite" && p != "maxunc" && p != "misspec" && p != "nonstationary" && p != "gap" && p != "iderror") {
      throw ConfigError("unknown protocol '" + p + "'");
    }
  }
  const fs::path out = fs::path(c.out_dir) / "eval" / to_string(c.policy.algorithm);
  fs::create_directories(out);

  std::vector<EvalReport> reports;
  SweepTable misspec;
  nlohmann::json extra = nlohmann::json::object();
  for (auto seed : c.seeds) {
    const std::string ckpt = o.checkpoint.empty() ? (run_dir(c, seed) / "checkpoint.json").string() : o.checkpoint;
    const AgentModel model = load_checkpoint(ckpt, c, o.allow_mismatch);
    const std::string key = "seed_" + std::to_string(seed);
    if (enabled("suite")) {
      auto rs = evaluate_model(c, model, suite, seed, c.jobs);
      if (rs.size() > 1) {
        std::cout << "seed " << seed << ": best " << best_report(rs).label << '\n';
        extra[key]["best_label"] = best_report(rs).label;
      }
      reports.insert(reports.end(), rs.begin(), rs.end());
    }
    AgentRuntime rt(model);
    if (enabled("maxunc")) {
      Rng rng(derive_seed(seed, 0xA11));
      const auto s = evaluate_max_uncertainty(env, rt, c.eval.K, rng);
      extra[key]["max_uncertainty"] = {{"min", s.min}, {"mean", s.mean}};
    }
    if (enabled("misspec")) {
      Rng rng(derive_seed(seed, 0xB22));
      auto t = misspecification_sweep(env, rt, suite, c.eval.r_levels, seed, rng);
      t.method = to_string(model.spec.algorithm);
      t.config_hash = config_hash(c);
      misspec.append(t);
    }
    if (enabled("nonstationary")) {
      Rng rng(derive_seed(seed, 0xC33));
      const auto ns = nonstationary_eval(env, rt, suite, c.eval.period, c.eval.horizon, c.eval.n_rollouts, rng);
      extra[key]["nonstationary"] = {{"mean_total", ns.mean_total}, {"totals", ns.totals}, {"rewards", ns.rewards}};
    }
    if (enabled("gap")) {
      if (model.conditioning() != Conditioning::kContext) throw ConfigError("gap protocol needs an oracle checkpoint");
      const auto space = env.context_space();
      Rng rng(derive_seed(seed, 0xD44));
      const auto g = estimate_worst_case_gap(env, model, {space.lower}, space.upper, c.eval.gap_rollouts, rng);
      extra[key]["worst_case_gap"] = {{"gap", g.gap}, {"stderr", g.stderr}};
    }
    if (enabled("iderror")) {
      Rng rng(derive_seed(seed, 0xE55));
      const auto s = identification_error(env, model, suite, c.eval.id_error_k, rng);
      emit_id_error(s, (out / ("id_error_" + key + ".csv")).string());
      extra[key]["id_error"] = s.mean_error;
    }
  }
  if (!reports.empty()) {
    emit_report(reports, (out / "report").string());
    for (const auto& a : aggregate(reports)) {
      std::cout << a.method << (a.label.empty() ? "" : " " + a.label) << ": min " << a.min_mean << " +- "
                << a.min_stderr << ", mean " << a.mean_mean << " +- " << a.mean_stderr << " (" << a.seeds
                << " seeds)\n";
    }
  }
  if (!misspec.rows.empty()) {
    emit_sweep(misspec, (out / "misspec").string());
    std::cout << "misspecification slope: " << sweep_slope(misspec) << '\n';
  }
  if (!extra.empty()) {
    extra["config_hash"] = config_hash(c);
    extra["artifact_version"] = kArtifactVersion;
    write_json(extra, out / "protocols.json");
  }
  std::cout << "wrote " << out.string() << '\n';
  return kOk;
}

int cmd_sweep(const Options& o) {
  RunConfig base = resolve_config(o);
  const TaskSuite suite = load_suite(o, base);
  if (o.axis.empty()) throw ConfigError("--axis is required");
  const auto values = parse_csv<double>(o.values, "values");
  const auto env = make_env(base);
  SweepTable table;
  table.axis = o.axis;
  table.method = to_string(base.policy.algorithm);
  table.config_hash = config_hash(base);
  table.values = values;
  nlohmann::json timing = nlohmann::json::object();

  if (o.axis == "r_level") {
    for (auto seed : base.seeds) {
      const auto run = train_run(base, suite, seed);
      AgentRuntime rt(run.model);
      Rng rng(derive_seed(seed, 0xB22));
      const auto t = misspecification_sweep(env, rt, suite, values, seed, rng);
      table.rows.insert(table.rows.end(), t.rows.begin(), t.rows.end());
    }
  } else {
    for (double v : values) {
      RunConfig c = base;
      if (o.axis == "alpha") {
        c.policy.alpha = v;
      } else if (o.axis == "n_cvar") {
        c.policy.n_cvar = static_cast<int>(v);
      } else if (o.axis == "b_ensemble") {
        c.policy.b_ensemble = static_cast<int>(v);
      } else {
        throw ConfigError("--axis must be one of alpha, n_cvar, b_ensemble, r_level");
      }
      c.validate();
      double secs = 0.0;
      for (auto seed : c.seeds) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto run = train_run(c, suite, seed);
        secs += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const auto rs = evaluate_model(c, run.model, suite, seed, c.jobs);
        const auto& r = best_report(rs);
        table.rows.push_back({v, seed, r.mean_of_mins, r.mean_of_means});
      }
      timing[std::to_string(v)] = secs;
      std::cout << o.axis << "=" << v << ": " << secs << " s training\n";
    }
  }
  const fs::path out = fs::path(base.out_dir) / "sweep";
  fs::create_directories(out);
  const std::string stem = (out / (table.method + "_" + o.axis)).string();
  emit_sweep(table, stem);
  if (!timing.empty()) write_json(timing, stem + "_timing.json");
  for (const auto& s : table.summary()) {
    std::cout << o.axis << "=" << s.value << ": min " << s.mean_min << " +- " << s.stderr_min << ", mean "
              << s.mean_mean << " +- " << s.stderr_mean << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Multi-set robust RL experiments on the point-mass domain"};
  app.require_subcommand(1);
  Options o;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "run config (JSON)")->required();
    sub->add_option("--out", o.out, "output directory (overrides config and SIRSA_OUT_DIR)");
    sub->add_option("--seeds", o.seeds, "comma-separated seeds");
    sub->add_option("--jobs", o.jobs, "worker threads for evaluation");
  };
  auto* suite = app.add_subcommand("suite", "generate the task suite");
  common(suite);
  auto* train = app.add_subcommand("train", "train one run per seed");
  common(train);
  train->add_option("--suite", o.suite, "suite file (default: regenerate from config)");
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints");
  common(eval);
  eval->add_option("--suite", o.suite, "suite file");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file (default: <out>/<method>/seed_<s>)");
  eval->add_option("--protocols", o.protocols, "suite,maxunc,misspec,nonstationary,gap,iderror");
  eval->add_flag("--allow-mismatch", o.allow_mismatch, "evaluate despite a config hash mismatch");
  auto* sweep = app.add_subcommand("sweep", "train and evaluate over one axis");
  common(sweep);
  sweep->add_option("--suite", o.suite, "suite file");
  sweep->add_option("--axis", o.axis, "alpha | n_cvar | b_ensemble | r_level")->required();
  sweep->add_option("--values", o.values, "comma-separated axis values")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }
  try {
    if (*suite) return cmd_suite(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*sweep) return cmd_sweep(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
