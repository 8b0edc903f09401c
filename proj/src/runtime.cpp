#include "sirsa/runtime.hpp"

#include <stdexcept>

namespace sirsa {

AgentRuntime::AgentRuntime(const AgentModel& model, RuntimeOptions opt) : model_(&model), opt_(std::move(opt)) {
  if (opt_.fixed_context && model.conditioning() != Conditioning::kContext) {
    throw std::invalid_argument("AgentRuntime: fixed_context needs a context-conditioned policy");
  }
}

void AgentRuntime::begin(const std::vector<UncertaintySet>& priors,
                         const std::vector<ContextVector>& true_contexts, Rng& rng) {
  if (priors.size() != true_contexts.size()) throw std::invalid_argument("AgentRuntime: size mismatch");
  xi_ = priors;
  ctx_ = true_contexts;
  if (opt_.fixed_context) {
    for (auto& c : ctx_) c = *opt_.fixed_context;
  }
  windows_.clear();
  ens_ctx_.clear();
  trace_.assign(1, xi_);
  if (model_->ensemble && opt_.filter) {
    windows_.assign(priors.size(), model_->ensemble->make_window());
  }
  if (model_->spec.algorithm == Algorithm::kPolicyEnsemble) {
    for (const auto& p : priors) {
      std::vector<ContextVector> cs;
      for (int k = 0; k < model_->spec.n_ens; ++k) cs.push_back(sample_context_uniform(p, rng));
      ens_ctx_.push_back(std::move(cs));
    }
  }
}

Vec AgentRuntime::act(const Mat& observations, Rng& rng) {
  const auto& m = *model_;
  const auto head = m.head();
  const Eigen::Index n = observations.rows();
  if (!ens_ctx_.empty()) {
    Vec a = Vec::Zero(n);
    const int k = m.spec.n_ens;
    for (int j = 0; j < k; ++j) {
      Mat cond(n, m.encoder.d());
      for (Eigen::Index i = 0; i < n; ++i) {
        cond.row(i) = m.encoder.context(ens_ctx_[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].transpose());
      }
      a += head.mean_action(m.actor.forward(m.actor_inputs(observations, cond))).col(0);
    }
    return a / static_cast<double>(k);
  }
  const auto kind = m.conditioning();
  Mat cond(n, m.encoder.conditioning_dim(kind));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    cond.row(i) = m.encoder.conditioning(kind, xi_[u], ctx_[u], opt_.wcpg_alpha).transpose();
  }
  const Mat out = m.actor.forward(m.actor_inputs(observations, cond));
  if (opt_.deterministic) return head.mean_action(out).col(0);
  return head.sample(out, standard_normal(n, kActDim, rng)).action.col(0);
}

void AgentRuntime::observe(const std::vector<Transition>& transitions) {
  if (windows_.empty()) return;
  const auto& ens = *model_->ensemble;
  Mat hist(static_cast<Eigen::Index>(transitions.size()), ens.history_dim());
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    windows_[i].push(transitions[i]);
    hist.row(static_cast<Eigen::Index>(i)) = windows_[i].features().transpose();
  }
  xi_ = ens.infer_posterior(xi_, hist);
  trace_.push_back(xi_);
}

double oracle_act(const AgentModel& model, const ContextVector& c, const Vec& obs) {
  const Mat cond = model.encoder.context(c.transpose());
  return model.head().mean_action(model.actor.forward(model.actor_inputs(obs.transpose(), cond)))(0, 0);
}

double ensemble_policy_act(const AgentModel& model, const std::vector<ContextVector>& contexts,
                           const Vec& obs) {
  if (contexts.empty()) throw std::invalid_argument("ensemble_policy_act: no contexts");
  double a = 0.0;
  for (const auto& c : contexts) a += oracle_act(model, c, obs);
  return a / static_cast<double>(contexts.size());
}

}  // namespace sirsa
