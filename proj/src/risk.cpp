#include "sirsa/risk.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

namespace sirsa {

int tail_count(double alpha, std::size_t n) {
  // Tolerate alpha * N landing a hair below an integer (e.g. 0.3 * 10).
  return static_cast<int>(std::floor(alpha * static_cast<double>(n) + 1e-9));
}

int RiskConfig::tail_count() const { return sirsa::tail_count(alpha, static_cast<std::size_t>(n_samples)); }

void RiskConfig::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (n_samples <= 0) throw std::invalid_argument("CVaR sample count must be positive");
  if (tail_count() < 1) throw std::invalid_argument("floor(alpha * N) must be at least 1");
}

namespace {

std::vector<double> sorted_tail_checked(std::span<const double> values, double alpha, int& k) {
  if (values.empty()) throw std::invalid_argument("empirical risk estimate of an empty list");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  k = tail_count(alpha, values.size());
  if (k < 1) throw std::invalid_argument("floor(alpha * N) must be at least 1");
  std::vector<double> v(values.begin(), values.end());
  std::partial_sort(v.begin(), v.begin() + k, v.end());
  return v;
}

}  // namespace

double empirical_var(std::span<const double> values, double alpha) {
  int k = 0;
  const auto v = sorted_tail_checked(values, alpha, k);
  return v[static_cast<std::size_t>(k - 1)];
}

double empirical_cvar(std::span<const double> values, double alpha) {
  int k = 0;
  const auto v = sorted_tail_checked(values, alpha, k);
  return std::accumulate(v.begin(), v.begin() + k, 0.0) / k;
}

double std_normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double std_normal_cdf(double x) { return 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double std_normal_inverse_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("inverse normal CDF needs p in (0, 1)");
  // Bisection to a coarse bracket, then Newton on the erf-based CDF.
  double lo = -40.0;
  double hi = 40.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (std_normal_cdf(mid) < p ? lo : hi) = mid;
  }
  double x = 0.5 * (lo + hi);
  for (int i = 0; i < 8; ++i) {
    const double pdf = std_normal_pdf(x);
    if (pdf <= 0.0) break;
    const double step = (std_normal_cdf(x) - p) / pdf;
    x -= step;
    if (std::abs(step) < 1e-14) break;
  }
  return x;
}

double gaussian_cvar_coefficient(double alpha, GaussianCvarForm form) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must lie in (0, 1]");
  if (form == GaussianCvarForm::kLiteral) return std_normal_pdf(alpha) / std_normal_cdf(alpha);
  if (alpha == 1.0) return 0.0;
  return std_normal_pdf(std_normal_inverse_cdf(alpha)) / alpha;
}

double gaussian_cvar_closed_form(double q_mean, double q_var, double alpha, GaussianCvarForm form) {
  if (q_var < 0.0) throw std::invalid_argument("gaussian_cvar_closed_form: negative variance");
  return q_mean - gaussian_cvar_coefficient(alpha, form) * std::sqrt(q_var);
}

CvarActorResult cvar_actor_gradient(const ContextCritic& critic, const Mlp& actor,
                                    const SquashedGaussian& head, const CvarActorBatch& batch,
                                    double alpha, double temperature) {
  const Eigen::Index n = batch.actor_inputs.rows();
  if (n == 0 || static_cast<Eigen::Index>(batch.contexts.size()) != n ||
      batch.states.rows() != n || batch.eps.rows() != n) {
    throw std::invalid_argument("cvar_actor_gradient: inconsistent batch");
  }
  const Eigen::Index n_ctx = batch.contexts.front().rows();
  const Eigen::Index d = batch.contexts.front().cols();
  const int k = tail_count(alpha, static_cast<std::size_t>(n_ctx));
  if (k < 1) throw std::invalid_argument("floor(alpha * N) must be at least 1");

  Mlp::Cache cache;
  const Mat out = actor.forward(batch.actor_inputs, cache);
  const auto smp = head.sample(out, batch.eps);
  const Eigen::Index A = smp.action.cols();
  const Eigen::Index S = batch.states.cols();

  // Evaluate Q on every (state, context) pair in one batch.
  Mat rep_states(n * n_ctx, S);
  Mat rep_actions(n * n_ctx, A);
  Mat all_ctx(n * n_ctx, d);
  for (Eigen::Index b = 0; b < n; ++b) {
    if (batch.contexts[static_cast<std::size_t>(b)].rows() != n_ctx) {
      throw std::invalid_argument("cvar_actor_gradient: ragged context samples");
    }
    rep_states.middleRows(b * n_ctx, n_ctx).rowwise() = batch.states.row(b);
    rep_actions.middleRows(b * n_ctx, n_ctx).rowwise() = smp.action.row(b);
    all_ctx.middleRows(b * n_ctx, n_ctx) = batch.contexts[static_cast<std::size_t>(b)];
  }
  Vec q;
  critic.evaluate(rep_states, rep_actions, all_ctx, q, nullptr);
  if (!q.allFinite()) throw std::runtime_error("cvar_actor_gradient: critic returned non-finite values");

  // Select the k lowest contexts per state (stable by index), then take the
  // action gradient on that subset only.
  Mat sel_states(n * k, S);
  Mat sel_actions(n * k, A);
  Mat sel_ctx(n * k, d);
  CvarActorResult res;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_ctx));
  for (Eigen::Index b = 0; b < n; ++b) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) {
      return q[b * n_ctx + i] < q[b * n_ctx + j];
    });
    double tail = 0.0;
    for (int r = 0; r < k; ++r) {
      const Eigen::Index src = b * n_ctx + order[static_cast<std::size_t>(r)];
      tail += q[src];
      sel_states.row(b * k + r) = batch.states.row(b);
      sel_actions.row(b * k + r) = smp.action.row(b);
      sel_ctx.row(b * k + r) = all_ctx.row(src);
    }
    res.mean_cvar += tail / k / static_cast<double>(n);
    res.mean_var += q[b * n_ctx + order[static_cast<std::size_t>(k - 1)]] / static_cast<double>(n);
  }
  Vec q_sel;
  Mat dq_da;
  critic.evaluate(sel_states, sel_actions, sel_ctx, q_sel, &dq_da);

  // Objective is an average over states, so each state's tail mean carries 1/(n k).
  Mat g_action = Mat::Zero(n, A);
  for (Eigen::Index b = 0; b < n; ++b) {
    for (int r = 0; r < k; ++r) g_action.row(b) += dq_da.row(b * k + r);
  }
  g_action /= static_cast<double>(n * k);
  const Vec g_logp = Vec::Constant(n, -temperature / static_cast<double>(n));
  const Mat g_out = head.backward(smp, g_action, g_logp);
  res.grads = actor.backward(cache, g_out).params;
  res.mean_log_prob = smp.log_prob.mean();
  res.objective = res.mean_cvar - temperature * res.mean_log_prob;
  return res;
}

CvarActorResult cvar_actor_gradient(const ContextCritic& critic, const Mlp& actor,
                                    const SquashedGaussian& head, const Mat& actor_inputs,
                                    const Mat& states, const std::vector<UncertaintySet>& sets,
                                    const RiskConfig& config, double temperature, Rng& rng) {
  config.validate();
  CvarActorBatch batch;
  batch.actor_inputs = actor_inputs;
  batch.states = states;
  batch.eps = standard_normal(actor_inputs.rows(), head.act_dim, rng);
  if (static_cast<Eigen::Index>(sets.size()) != actor_inputs.rows()) {
    throw std::invalid_argument("cvar_actor_gradient: one uncertainty set per state required");
  }
  for (const auto& set : sets) {
    Mat c(config.n_samples, set.dim());
    for (int i = 0; i < config.n_samples; ++i) c.row(i) = sample_context_uniform(set, rng).transpose();
    batch.contexts.push_back(std::move(c));
  }
  return cvar_actor_gradient(critic, actor, head, batch, config.alpha, temperature);
}

}  // namespace sirsa
