#include "sirsa/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace sirsa {

std::pair<double, double> mean_stderr(const std::vector<double>& xs) {
  if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(), 0.0};
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  return {mean, std::sqrt(ss / (n - 1.0)) / std::sqrt(n)};
}

SetEval evaluate_on_set(const PointMassEnv& env, RolloutPolicy& policy, const UncertaintySet& set,
                        int K, Rng& rng) {
  if (K < 1) throw std::invalid_argument("evaluate_on_set: K must be positive");
  SetEval out;
  out.set = set;
  for (int k = 0; k < K; ++k) out.contexts.push_back(sample_context_uniform(set, rng));
  try {
    const std::vector<UncertaintySet> priors(static_cast<std::size_t>(K), set);
    out.returns = batch_rollout(env, policy, priors, out.contexts, rng).returns;
    out.min = *std::min_element(out.returns.begin(), out.returns.end());
    out.mean = std::accumulate(out.returns.begin(), out.returns.end(), 0.0) / K;
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
    out.returns.clear();
    out.min = out.mean = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

void summarize(EvalReport& report) {
  std::vector<double> mins, means;
  report.failed = false;
  for (const auto& s : report.sets) {
    if (s.failed) {
      report.failed = true;
      continue;
    }
    mins.push_back(s.min);
    means.push_back(s.mean);
  }
  std::tie(report.mean_of_mins, report.stderr_mins) = mean_stderr(mins);
  std::tie(report.mean_of_means, report.stderr_means) = mean_stderr(means);
}

EvalReport evaluate_test_suite(const PointMassEnv& env, const PolicyFactory& make_policy,
                               const TaskSuite& suite, int K, std::uint64_t seed, int jobs) {
  if (suite.test_sets.empty()) throw std::invalid_argument("evaluate_test_suite: suite has no test sets");
  EvalReport report;
  report.seed = seed;
  report.sets.resize(suite.test_sets.size());
  const auto run_one = [&](RolloutPolicy& policy, std::size_t i) {
    Rng rng(derive_seed(seed, i));
    report.sets[i] = evaluate_on_set(env, policy, suite.test_sets[i], K, rng);
  };
  const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1,
                                                      suite.test_sets.size());
  if (workers == 1) {
    auto policy = make_policy();
    for (std::size_t i = 0; i < suite.test_sets.size(); ++i) run_one(*policy, i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        auto policy = make_policy();
        for (std::size_t i = next++; i < suite.test_sets.size(); i = next++) run_one(*policy, i);
      });
    }
    for (auto& t : pool) t.join();
  }
  summarize(report);
  return report;
}

SetEval evaluate_max_uncertainty(const PointMassEnv& env, RolloutPolicy& policy, int K, Rng& rng) {
  return evaluate_on_set(env, policy, max_uncertainty_set(env.context_space()), K, rng);
}

std::vector<SweepSummary> SweepTable::summary() const {
  std::vector<SweepSummary> out;
  for (double v : values) {
    std::vector<double> mins, means;
    for (const auto& r : rows) {
      if (r.value == v) {
        mins.push_back(r.min);
        means.push_back(r.mean);
      }
    }
    SweepSummary s;
    s.value = v;
    s.n = static_cast<int>(mins.size());
    std::tie(s.mean_min, s.stderr_min) = mean_stderr(mins);
    std::tie(s.mean_mean, s.stderr_mean) = mean_stderr(means);
    out.push_back(s);
  }
  return out;
}

void SweepTable::append(const SweepTable& other) {
  if (axis.empty()) {
    axis = other.axis;
    method = other.method;
    config_hash = other.config_hash;
  }
  for (double v : other.values) {
    if (std::find(values.begin(), values.end(), v) == values.end()) values.push_back(v);
  }
  rows.insert(rows.end(), other.rows.begin(), other.rows.end());
}

SweepTable misspecification_sweep(const PointMassEnv& env, RolloutPolicy& policy, const TaskSuite& suite,
                                  const std::vector<double>& r_levels, std::uint64_t seed, Rng& rng) {
  if (r_levels.empty()) throw std::invalid_argument("misspecification_sweep: no r levels");
  SweepTable table;
  table.axis = "r_level";
  table.values = r_levels;
  const auto bounds = env.simulator_bounds();
  for (double r : r_levels) {
    std::vector<double> set_mins, all;
    for (const auto& set : suite.test_sets) {
      const auto corners = make_misspecified_contexts(set, r, bounds);
      const std::vector<UncertaintySet> priors(corners.size(), set);
      const auto res = batch_rollout(env, policy, priors, corners, rng);
      set_mins.push_back(*std::min_element(res.returns.begin(), res.returns.end()));
      all.insert(all.end(), res.returns.begin(), res.returns.end());
    }
    table.rows.push_back({r, seed, mean_stderr(set_mins).first, mean_stderr(all).first});
  }
  return table;
}

double sweep_slope(const SweepTable& table) {
  const auto s = table.summary();
  if (s.size() < 2) return 0.0;
  double mx = 0.0, my = 0.0;
  for (const auto& r : s) {
    mx += r.value;
    my += r.mean_mean;
  }
  mx /= static_cast<double>(s.size());
  my /= static_cast<double>(s.size());
  double sxy = 0.0, sxx = 0.0;
  for (const auto& r : s) {
    sxy += (r.value - mx) * (r.mean_mean - my);
    sxx += (r.value - mx) * (r.value - mx);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

NonstationaryEval nonstationary_eval(const PointMassEnv& env, RolloutPolicy& policy,
                                     const TaskSuite& suite, int period, int horizon, int n_rollouts,
                                     Rng& rng) {
  if (suite.test_sets.empty()) throw std::invalid_argument("nonstationary_eval: suite has no test sets");
  NonstationaryEval out;
  for (int i = 0; i < n_rollouts; ++i) {
    const auto& set = suite.test_sets[static_cast<std::size_t>(i) % suite.test_sets.size()];
    auto res = nonstationary_rollout(env, policy, set, period, horizon, rng);
    out.totals.push_back(res.total_return);
    out.rewards.push_back(std::move(res.rewards));
  }
  out.mean_total = mean_stderr(out.totals).first;
  return out;
}

GapEstimate estimate_worst_case_gap(const PointMassEnv& env, const AgentModel& oracle,
                                    const std::vector<ContextVector>& confusion,
                                    const ContextVector& c_eval, int n_rollouts, Rng& rng,
                                    bool deterministic) {
  if (confusion.empty()) throw std::invalid_argument("estimate_worst_case_gap: empty confusion set");
  if (n_rollouts < 1) throw std::invalid_argument("estimate_worst_case_gap: n_rollouts must be positive");
  const UncertaintySet point(c_eval, Vec::Zero(c_eval.size()));
  const std::vector<UncertaintySet> priors(static_cast<std::size_t>(n_rollouts), point);
  const std::vector<ContextVector> truth(static_cast<std::size_t>(n_rollouts), c_eval);
  const auto returns_with = [&](const ContextVector& cond) {
    RuntimeOptions opt;
    opt.deterministic = deterministic;
    opt.fixed_context = cond;
    AgentRuntime rt(oracle, opt);
    return batch_rollout(env, rt, priors, truth, rng).returns;
  };
  const auto own = returns_with(c_eval);
  GapEstimate g;
  g.gap = -std::numeric_limits<double>::infinity();
  for (const auto& c : confusion) {
    const auto other = returns_with(c);
    std::vector<double> diff(own.size());
    for (std::size_t i = 0; i < own.size(); ++i) diff[i] = own[i] - other[i];
    const auto [m, se] = mean_stderr(diff);
    g.per_context.push_back(m);
    if (m > g.gap) {
      g.gap = m;
      g.stderr = se;
    }
  }
  return g;
}

IdErrorSummary identification_error(const PointMassEnv& env, const AgentModel& model,
                                    const TaskSuite& suite, int K, Rng& rng) {
  if (!model.ensemble) throw std::invalid_argument("identification_error: model has no ensemble");
  const auto space = env.context_space();
  const Vec range = space.upper - space.lower;
  const int T = env.config().horizon;
  std::vector<double> err(static_cast<std::size_t>(T + 1), 0.0);
  std::vector<double> sig(static_cast<std::size_t>(T + 1), 0.0);
  std::size_t episodes = 0;
  AgentRuntime rt(model);
  for (const auto& set : suite.test_sets) {
    std::vector<ContextVector> ctx;
    for (int k = 0; k < K; ++k) ctx.push_back(sample_context_uniform(set, rng));
    const std::vector<UncertaintySet> priors(ctx.size(), set);
    (void)batch_rollout(env, rt, priors, ctx, rng);
    const auto& trace = rt.set_trace();
    for (std::size_t t = 0; t < trace.size(); ++t) {
      for (std::size_t i = 0; i < ctx.size(); ++i) {
        err[t] += ((trace[t][i].center - ctx[i]).cwiseAbs().cwiseQuotient(range)).mean();
        sig[t] += trace[t][i].width.cwiseQuotient(range).mean();
      }
    }
    episodes += ctx.size();
  }
  IdErrorSummary s;
  double total = 0.0;
  for (int t = 0; t <= T; ++t) {
    const auto u = static_cast<std::size_t>(t);
    IdErrorRow row{to_string(env.config().variant), t, err[u] / static_cast<double>(episodes),
                   sig[u] / static_cast<double>(episodes)};
    if (t >= 1) total += row.mean_abs_error;
    s.rows.push_back(row);
  }
  s.mean_error = total / T;
  return s;
}

// ---------------------------------------------------------------- serialization

namespace {

nlohmann::json num(double x) {
  if (std::isfinite(x)) return x;
  return nullptr;
}

double num_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << std::setprecision(17);
  return f;
}

void close_out(std::ofstream& f, const std::string& path) {
  f.close();
  if (!f) throw std::runtime_error("write to '" + path + "' failed");
}

void write_json(const nlohmann::json& j, const std::string& path) {
  auto f = open_out(path);
  f << j.dump(2) << '\n';
  close_out(f, path);
}

void write_eval_rows(std::ostream& f, const EvalReport& r) {
  for (std::size_t s = 0; s < r.sets.size(); ++s) {
    const auto& set = r.sets[s];
    for (std::size_t k = 0; k < set.returns.size(); ++k) {
      f << r.method << ',' << r.label << ',' << r.seed << ',' << s << ',' << k << ','
        << set.returns[k] << ',' << r.config_hash << '\n';
    }
  }
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json sets = nlohmann::json::array();
  for (const auto& s : r.sets) {
    nlohmann::json ctx = nlohmann::json::array();
    for (const auto& c : s.contexts) ctx.push_back(vec_to_json(c));
    sets.push_back({{"set", to_json(s.set)},
                    {"contexts", ctx},
                    {"returns", s.returns},
                    {"min", num(s.min)},
                    {"mean", num(s.mean)},
                    {"failed", s.failed},
                    {"error", s.error}});
  }
  return {{"artifact_version", kArtifactVersion},
          {"method", r.method},
          {"label", r.label},
          {"seed", r.seed},
          {"config_hash", r.config_hash},
          {"mean_of_mins", num(r.mean_of_mins)},
          {"mean_of_means", num(r.mean_of_means)},
          {"stderr_mins", num(r.stderr_mins)},
          {"stderr_means", num(r.stderr_means)},
          {"failed", r.failed},
          {"sets", sets}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.label = j.at("label").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.config_hash = j.at("config_hash").get<std::string>();
  r.mean_of_mins = num_from(j.at("mean_of_mins"));
  r.mean_of_means = num_from(j.at("mean_of_means"));
  r.stderr_mins = num_from(j.at("stderr_mins"));
  r.stderr_means = num_from(j.at("stderr_means"));
  r.failed = j.at("failed").get<bool>();
  for (const auto& s : j.at("sets")) {
    SetEval e;
    e.set = set_from_json(s.at("set"));
    for (const auto& c : s.at("contexts")) e.contexts.push_back(vec_from_json(c));
    e.returns = s.at("returns").get<std::vector<double>>();
    e.min = num_from(s.at("min"));
    e.mean = num_from(s.at("mean"));
    e.failed = s.at("failed").get<bool>();
    e.error = s.at("error").get<std::string>();
    r.sets.push_back(std::move(e));
  }
  return r;
}

nlohmann::json to_json(const SweepTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"value", r.value}, {"seed", r.seed}, {"min", num(r.min)}, {"mean", num(r.mean)}});
  }
  nlohmann::json summary = nlohmann::json::array();
  for (const auto& s : t.summary()) {
    summary.push_back({{"value", s.value},
                       {"n", s.n},
                       {"min", num(s.mean_min)},
                       {"min_stderr", num(s.stderr_min)},
                       {"mean", num(s.mean_mean)},
                       {"mean_stderr", num(s.stderr_mean)}});
  }
  return {{"artifact_version", kArtifactVersion},
          {"axis", t.axis},
          {"method", t.method},
          {"config_hash", t.config_hash},
          {"values", t.values},
          {"rows", rows},
          {"summary", summary}};
}

SweepTable sweep_from_json(const nlohmann::json& j) {
  SweepTable t;
  t.axis = j.at("axis").get<std::string>();
  t.method = j.at("method").get<std::string>();
  t.config_hash = j.at("config_hash").get<std::string>();
  t.values = j.at("values").get<std::vector<double>>();
  for (const auto& r : j.at("rows")) {
    t.rows.push_back({r.at("value").get<double>(), r.at("seed").get<std::uint64_t>(),
                      num_from(r.at("min")), num_from(r.at("mean"))});
  }
  return t;
}

void emit_report(const EvalReport& r, const std::string& stem) {
  emit_report(std::vector<EvalReport>{r}, stem);
}

void emit_report(const std::vector<EvalReport>& rs, const std::string& stem) {
  const std::string csv = stem + ".csv";
  auto f = open_out(csv);
  f << "method,label,seed,set_id,sample_id,return,config_hash\n";
  for (const auto& r : rs) write_eval_rows(f, r);
  close_out(f, csv);

  nlohmann::json reports = nlohmann::json::array();
  for (const auto& r : rs) reports.push_back(to_json(r));
  nlohmann::json agg = nlohmann::json::array();
  for (const auto& a : aggregate(rs)) {
    agg.push_back({{"method", a.method},
                   {"label", a.label},
                   {"seeds", a.seeds},
                   {"min", num(a.min_mean)},
                   {"min_stderr", num(a.min_stderr)},
                   {"mean", num(a.mean_mean)},
                   {"mean_stderr", num(a.mean_stderr)}});
  }
  write_json({{"artifact_version", kArtifactVersion}, {"reports", reports}, {"aggregate", agg}},
             stem + ".json");
}

void emit_sweep(const SweepTable& t, const std::string& stem) {
  const std::string csv = stem + ".csv";
  auto f = open_out(csv);
  f << "axis,value,seed,min,mean,method,config_hash\n";
  for (const auto& r : t.rows) {
    f << t.axis << ',' << r.value << ',' << r.seed << ',' << r.min << ',' << r.mean << ','
      << t.method << ',' << t.config_hash << '\n';
  }
  close_out(f, csv);
  write_json(to_json(t), stem + ".json");
}

void emit_id_error(const IdErrorSummary& s, const std::string& path) {
  auto f = open_out(path);
  f << "variant,t,mean_abs_error,mean_sigma\n";
  for (const auto& r : s.rows) f << r.variant << ',' << r.t << ',' << r.mean_abs_error << ',' << r.mean_sigma << '\n';
  close_out(f, path);
}

std::vector<AggregateRow> aggregate(const std::vector<EvalReport>& reports) {
  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : reports) {
    const auto key = std::make_pair(r.method, r.label);
    if (!groups.count(key)) order.push_back(key);
    groups[key].first.push_back(r.mean_of_mins);
    groups[key].second.push_back(r.mean_of_means);
  }
  std::vector<AggregateRow> out;
  for (const auto& key : order) {
    const auto& [mins, means] = groups[key];
    AggregateRow a;
    a.method = key.first;
    a.label = key.second;
    a.seeds = static_cast<int>(mins.size());
    std::tie(a.min_mean, a.min_stderr) = mean_stderr(mins);
    std::tie(a.mean_mean, a.mean_stderr) = mean_stderr(means);
    out.push_back(a);
  }
  return out;
}

}  // namespace sirsa
