#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirsa/runtime.hpp"

namespace sirsa {

inline constexpr const char* kArtifactVersion = "sirsa-eval/1";

struct SetEval {
  UncertaintySet set;
  std::vector<ContextVector> contexts;
  std::vector<double> returns;
  double min = 0.0;
  double mean = 0.0;
  bool failed = false;
  std::string error;
};

struct EvalReport {
  std::string method;
  std::string label;  // e.g. "alpha=0.50" for alpha-conditioned policies
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<SetEval> sets;
  double mean_of_mins = 0.0;
  double mean_of_means = 0.0;
  double stderr_mins = 0.0;  // across sets
  double stderr_means = 0.0;
  bool failed = false;
};

/// Builds a fresh policy for one worker thread.
using PolicyFactory = std::function<std::unique_ptr<RolloutPolicy>()>;

/// K rollouts, one per context sampled uniformly from the set; the policy's
/// prior is the set itself. Rollout errors are captured in the failure flag.
SetEval evaluate_on_set(const PointMassEnv& env, RolloutPolicy& policy, const UncertaintySet& set,
                        int K, Rng& rng);

/// Every test set; set i draws from its own stream derived from `seed`, so
/// results do not depend on `jobs`.
EvalReport evaluate_test_suite(const PointMassEnv& env, const PolicyFactory& make_policy,
                               const TaskSuite& suite, int K, std::uint64_t seed, int jobs = 1);

/// evaluate_on_set on the set spanning the whole context space.
SetEval evaluate_max_uncertainty(const PointMassEnv& env, RolloutPolicy& policy, int K, Rng& rng);

/// Recomputes mean_of_mins / mean_of_means and their standard errors.
void summarize(EvalReport& report);

struct SweepRow {
  double value = 0.0;
  std::uint64_t seed = 0;
  double min = 0.0;
  double mean = 0.0;
};

struct SweepSummary {
  double value = 0.0;
  double mean_min = 0.0;
  double stderr_min = 0.0;
  double mean_mean = 0.0;
  double stderr_mean = 0.0;
  int n = 0;
};

struct SweepTable {
  std::string axis;  // alpha | n_cvar | b_ensemble | r_level
  std::string method;
  std::string config_hash;
  std::vector<double> values;
  std::vector<SweepRow> rows;  // one per (value, seed)

  [[nodiscard]] std::vector<SweepSummary> summary() const;
  void append(const SweepTable& other);
};

/// For each test set and r level: roll out at the 2^d corner contexts with
/// the original set as the prior. Row min = mean over sets of the corner
/// minimum; row mean = mean over all corner returns.
SweepTable misspecification_sweep(const PointMassEnv& env, RolloutPolicy& policy, const TaskSuite& suite,
                                  const std::vector<double>& r_levels, std::uint64_t seed, Rng& rng);

/// Least-squares slope of the per-value mean column (averaged over seeds).
double sweep_slope(const SweepTable& table);

struct NonstationaryEval {
  std::vector<double> totals;
  std::vector<std::vector<double>> rewards;
  double mean_total = 0.0;
};

/// Rollout i starts from test set i mod n_test; the context is resampled
/// from that set every `period` steps.
NonstationaryEval nonstationary_eval(const PointMassEnv& env, RolloutPolicy& policy,
                                     const TaskSuite& suite, int period, int horizon, int n_rollouts,
                                     Rng& rng);

struct GapEstimate {
  double gap = 0.0;
  double stderr = 0.0;
  std::vector<double> per_context;  // G(c_eval | c_eval) - G(c_eval | c')
};

/// Monte-Carlo worst-case gap of a context-conditioned policy at c_eval.
GapEstimate estimate_worst_case_gap(const PointMassEnv& env, const AgentModel& oracle,
                                    const std::vector<ContextVector>& confusion,
                                    const ContextVector& c_eval, int n_rollouts, Rng& rng,
                                    bool deterministic = false);

struct IdErrorRow {
  std::string variant;
  int t = 0;
  double mean_abs_error = 0.0;  // |mu_t - c| / range, averaged over dims and episodes
  double mean_sigma = 0.0;      // sigma_t / range
};

struct IdErrorSummary {
  std::vector<IdErrorRow> rows;
  double mean_error = 0.0;  // averaged over t >= 1
};

/// Filters through the model's ensemble on K contexts per test set.
IdErrorSummary identification_error(const PointMassEnv& env, const AgentModel& model,
                                    const TaskSuite& suite, int K, Rng& rng);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SweepTable& t);
SweepTable sweep_from_json(const nlohmann::json& j);

/// Writes <stem>.csv (flat rows) and <stem>.json (nested). Throws on I/O errors.
void emit_report(const EvalReport& r, const std::string& stem);
void emit_report(const std::vector<EvalReport>& rs, const std::string& stem);
void emit_sweep(const SweepTable& t, const std::string& stem);
void emit_id_error(const IdErrorSummary& s, const std::string& path);

struct AggregateRow {
  std::string method;
  std::string label;
  int seeds = 0;
  double min_mean = 0.0;
  double min_stderr = 0.0;
  double mean_mean = 0.0;
  double mean_stderr = 0.0;
};

/// Mean and standard error over seeds, grouped by (method, label).
std::vector<AggregateRow> aggregate(const std::vector<EvalReport>& reports);

/// Mean and standard error (sample std / sqrt(n); 0 for n < 2).
std::pair<double, double> mean_stderr(const std::vector<double>& xs);

}  // namespace sirsa
