#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "sirsa/eval.hpp"

using namespace sirsa;

namespace {

TaskSuite suite_for(const PointMassEnv& env, int n_test, std::uint64_t seed, double width = 0.25) {
  Rng rng(seed);
  return make_task_suite({env.context_space(), width}, 4, 2, n_test, rng);
}

PolicyFactory scripted(std::function<double(const Vec&)> f) {
  return [f] { return std::make_unique<testing::ScriptedPolicy>(f); };
}

// Dodges upward once the agent is close to the origin.
double dodge(const Vec& o) { return std::abs(o[0]) < 0.15 && o[1] < 0.06 ? 0.05 : (o[0] > 0.15 ? -0.05 : 0.0); }

AgentModel tiny_model(Algorithm alg, const PointMassEnv& env, std::uint64_t seed) {
  Rng rng(seed);
  PolicySpec spec;
  spec.algorithm = alg;
  TrainConfig t;
  t.hidden = {8};
  t.varnet_hidden = {8};
  return make_agent(spec, t, env, rng);
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("per-set minimum never exceeds the mean and K rollouts are run") {
  const PointMassEnv env;
  const auto suite = suite_for(env, 6, 1);
  for (int K : {1, 7, 50}) {
    const auto rep = evaluate_test_suite(env, scripted(dodge), suite, K, 3);
    CHECK(rep.sets.size() == 6);
    for (const auto& s : rep.sets) {
      CHECK(s.returns.size() == static_cast<std::size_t>(K));
      CHECK(s.contexts.size() == static_cast<std::size_t>(K));
      CHECK(s.min <= s.mean);
      for (const auto& c : s.contexts) CHECK(set_contains(s.set, c));
      for (double r : s.returns) CHECK(r <= env.episode_return_upper_bound());
      if (K == 1) CHECK(s.min == s.mean);
    }
    CHECK(rep.mean_of_mins <= rep.mean_of_means);
  }
  Rng rng(1);
  testing::ScriptedPolicy p(dodge);
  CHECK_THROWS_AS((void)evaluate_on_set(env, p, suite.test_sets[0], 0, rng), std::invalid_argument);
}

TEST_CASE("a point set gives identical returns") {
  const PointMassEnv env;
  testing::ScriptedPolicy p(dodge);
  Rng rng(2);
  const UncertaintySet set(Vec{{0.05, 0.08}}, Vec::Zero(2));
  const auto s = evaluate_on_set(env, p, set, 10, rng);
  for (double r : s.returns) CHECK(r == s.returns.front());
  CHECK(s.min == s.mean);
}

TEST_CASE("one test set: aggregates equal the set statistics") {
  const PointMassEnv env;
  const auto suite = suite_for(env, 1, 4);
  const auto rep = evaluate_test_suite(env, scripted(dodge), suite, 20, 5);
  CHECK(rep.mean_of_mins == rep.sets[0].min);
  CHECK(rep.mean_of_means == rep.sets[0].mean);
  CHECK(rep.stderr_mins == 0.0);
}

TEST_CASE("reports do not depend on the number of workers") {
  const PointMassEnv env;
  const auto suite = suite_for(env, 8, 6);
  const auto model = tiny_model(Algorithm::kSirsa, env, 3);
  const PolicyFactory f = [&] { return std::make_unique<AgentRuntime>(model); };
  const auto a = evaluate_test_suite(env, f, suite, 10, 11, 1);
  const auto b = evaluate_test_suite(env, f, suite, 10, 11, 4);
  const auto c = evaluate_test_suite(env, f, suite, 10, 11, 1);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(to_json(a).dump() == to_json(c).dump());
}

TEST_CASE("rollout failures are captured per set") {
  const PointMassEnv env;
  const auto suite = suite_for(env, 3, 7);
  const auto rep = evaluate_test_suite(env, scripted([](const Vec&) { return std::nan(""); }), suite, 5, 1);
  CHECK(rep.failed);
  for (const auto& s : rep.sets) {
    CHECK(s.failed);
    CHECK_FALSE(s.error.empty());
  }
}

TEST_CASE("report json round trip") {
  const PointMassEnv env;
  const auto suite = suite_for(env, 3, 8);
  auto rep = evaluate_test_suite(env, scripted(dodge), suite, 4, 2);
  rep.method = "sirsa";
  rep.label = "alpha=0.50";
  rep.config_hash = "00ff";
  const auto back = report_from_json(nlohmann::json::parse(to_json(rep).dump()));
  CHECK(to_json(back).dump() == to_json(rep).dump());
  CHECK(back.sets[1].returns == rep.sets[1].returns);
}

TEST_CASE("emitted csv has one row per rollout") {
  const PointMassEnv env;
  const auto suite = suite_for(env, 2, 9);
  auto rep = evaluate_test_suite(env, scripted(dodge), suite, 3, 2);
  rep.method = "set_epopt";
  const auto dir = std::filesystem::temp_directory_path() / "sirsa_eval_test";
  std::filesystem::create_directories(dir);
  const std::string stem = (dir / "report").string();
  emit_report(rep, stem);
  std::ifstream f(stem + ".csv");
  std::string line;
  std::getline(f, line);
  CHECK(line == "method,label,seed,set_id,sample_id,return,config_hash");
  int rows = 0;
  while (std::getline(f, line)) ++rows;
  CHECK(rows == 6);
  std::ifstream j(stem + ".json");
  const auto parsed = nlohmann::json::parse(j);
  CHECK(parsed.at("artifact_version") == kArtifactVersion);
  std::filesystem::remove_all(dir);
}

TEST_CASE("aggregate over seeds") {
  EvalReport a, b;
  a.method = b.method = "oracle";
  a.mean_of_mins = 40.0;
  b.mean_of_mins = 42.0;
  a.mean_of_means = 44.0;
  b.mean_of_means = 44.0;
  const auto rows = aggregate({a, b});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].seeds == 2);
  CHECK(rows[0].min_mean == 41.0);
  CHECK(rows[0].min_stderr == doctest::Approx(1.0));
  CHECK(rows[0].mean_stderr == 0.0);
  CHECK(mean_stderr({3.0}).second == 0.0);
}

TEST_CASE("misspecification sweep rows and slope") {
  const PointMassEnv env;
  const auto suite = suite_for(env, 4, 10);
  testing::ScriptedPolicy p(dodge);
  Rng rng(3);
  const auto table = misspecification_sweep(env, p, suite, {0.25, 0.5, 1.0}, 0, rng);
  CHECK(table.rows.size() == 3);
  for (const auto& r : table.rows) CHECK(r.min <= r.mean);
  SweepTable line;
  line.values = {0.0, 1.0, 2.0};
  for (int i = 0; i < 3; ++i) line.rows.push_back({static_cast<double>(i), 0, 0.0, 10.0 - 2.0 * i});
  CHECK(sweep_slope(line) == doctest::Approx(-2.0));
  const auto back = sweep_from_json(nlohmann::json::parse(to_json(table).dump()));
  CHECK(back.rows.size() == 3);
  CHECK(back.rows[2].mean == table.rows[2].mean);
}

TEST_CASE("non-stationary evaluation with a point set matches stationary rollouts") {
  const PointMassEnv env;
  TaskSuite suite;
  suite.test_sets.emplace_back(Vec{{0.05, 0.08}}, Vec::Zero(2));
  testing::ScriptedPolicy p(dodge);
  Rng rng(4);
  const auto ns = nonstationary_eval(env, p, suite, 10, 50, 3, rng);
  const auto st = batch_rollout(env, p, {suite.test_sets[0]}, {suite.test_sets[0].center}, rng);
  for (double t : ns.totals) CHECK(t == st.returns[0]);
  CHECK(ns.rewards.front().size() == 50);
}

TEST_CASE("worst-case gap of a context against itself is zero") {
  const PointMassEnv env;
  const auto model = tiny_model(Algorithm::kOracle, env, 5);
  const Vec c{{0.05, 0.08}};
  Rng rng(6);
  const auto g = estimate_worst_case_gap(env, model, {c}, c, 5, rng, true);
  CHECK(g.gap == 0.0);
  Rng r2(6);
  const auto g2 = estimate_worst_case_gap(env, model, {c, Vec{{0.03, 0.1}}}, c, 5, r2, true);
  CHECK(g2.gap >= 0.0);
  CHECK(g2.per_context.size() == 2);
}

TEST_CASE("identification error is bounded and well formed") {
  const PointMassEnv env;
  const auto model = tiny_model(Algorithm::kSystemId, env, 6);
  const auto suite = suite_for(env, 2, 11);
  Rng rng(7);
  const auto s = identification_error(env, model, suite, 3, rng);
  CHECK(s.rows.size() == 51);
  CHECK(s.rows[0].t == 0);
  CHECK(std::isfinite(s.mean_error));
  CHECK(s.mean_error >= 0.0);
  const auto no_ens = tiny_model(Algorithm::kSetEpopt, env, 6);
  CHECK_THROWS_AS((void)identification_error(env, no_ens, suite, 3, rng), std::invalid_argument);
}

TEST_CASE("policy ensemble evaluation is deterministic for fixed seeds") {
  const PointMassEnv env;
  const auto model = tiny_model(Algorithm::kPolicyEnsemble, env, 8);
  const auto suite = suite_for(env, 3, 12);
  const PolicyFactory f = [&] { return std::make_unique<AgentRuntime>(model); };
  const auto a = evaluate_test_suite(env, f, suite, 5, 1);
  const auto b = evaluate_test_suite(env, f, suite, 5, 1);
  CHECK(to_json(a).dump() == to_json(b).dump());
}

}
