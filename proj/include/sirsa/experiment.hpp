#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirsa/eval.hpp"

namespace sirsa {

/// Thrown for anything wrong with a config file (maps to exit code 1).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SuiteParams {
  std::uint64_t seed = 0;
  int n_train_sets = 20;
  int contexts_per_set = 3;
  int n_test_sets = 20;
  double width_fraction = 0.25;
};

struct EvalParams {
  int K = 50;
  std::vector<double> r_levels{0.25, 0.5, 0.75, 1.0};
  int period = 10;
  int horizon = 50;
  int n_rollouts = 10;
  std::vector<double> wcpg_alphas{0.25, 0.5, 0.75, 1.0};
  int gap_rollouts = 10;
  int id_error_k = 10;
};

struct RunConfig {
  PointMassConfig env;
  SuiteParams suite;
  PolicySpec policy;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "runs";
  int jobs = 1;
  EvalParams eval;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Strict parse: unknown keys anywhere are rejected. Missing keys keep defaults.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& c);
RunConfig load_config(const std::string& path);
/// SIRSA_OUT_DIR and SIRSA_JOBS, nothing else.
void apply_env_overrides(RunConfig& c);

nlohmann::json to_json(const PolicySpec& s);
PolicySpec policy_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& t);
TrainConfig train_from_json(const nlohmann::json& j);

/// FNV-1a over the canonical JSON of everything that shapes training
/// (env, suite, policy, train); hex string.
std::string config_hash(const RunConfig& c);

PointMassEnv make_env(const RunConfig& c);
TaskSuite build_suite(const RunConfig& c);

struct TrainedRun {
  AgentModel model;
  TrainStats stats;
  std::uint64_t seed = 0;
};

TrainedRun train_run(const RunConfig& c, const TaskSuite& suite, std::uint64_t seed,
                     const std::function<void(const Trainer&, long)>& on_checkpoint = {});

/// Risk levels an evaluation should cover: the configured WCPG levels for
/// alpha-conditioned policies, a single placeholder otherwise.
std::vector<double> eval_alphas(const RunConfig& c, const AgentModel& model);

/// Test-suite evaluation of one trained model; one report per entry of eval_alphas.
std::vector<EvalReport> evaluate_model(const RunConfig& c, const AgentModel& model, const TaskSuite& suite,
                                       std::uint64_t seed, int jobs);

/// Report with the best mean-of-mins among alpha-labelled reports of one seed.
const EvalReport& best_report(const std::vector<EvalReport>& reports);

void write_train_log(const TrainStats& stats, const std::string& path);

}  // namespace sirsa
