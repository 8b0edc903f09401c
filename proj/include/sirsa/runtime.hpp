#pragma once

#include <optional>
#include <vector>

#include "sirsa/agents.hpp"

namespace sirsa {

struct RuntimeOptions {
  bool deterministic = true;  // act with the policy mean
  double wcpg_alpha = 1.0;    // risk level fed to alpha-conditioned actors
  bool filter = true;         // run the system-ID filter when the model has one
  /// Condition every episode on this context instead of the true one
  /// (oracle-style policies only; used by the worst-case gap probe).
  std::optional<ContextVector> fixed_context;
};

/// Read-only evaluation policy built on a trained model. Per-episode state
/// (filtered sets, history windows, sampled ensemble contexts) lives here and
/// is reset by begin().
class AgentRuntime : public RolloutPolicy {
 public:
  explicit AgentRuntime(const AgentModel& model, RuntimeOptions opt = {});

  void begin(const std::vector<UncertaintySet>& priors, const std::vector<ContextVector>& true_contexts,
             Rng& rng) override;
  Vec act(const Mat& observations, Rng& rng) override;
  void observe(const std::vector<Transition>& transitions) override;

  [[nodiscard]] const std::vector<UncertaintySet>& current_sets() const { return xi_; }
  /// trace[t][i]: set of episode i before step t (t = 0 is the prior).
  [[nodiscard]] const std::vector<std::vector<UncertaintySet>>& set_trace() const { return trace_; }

 private:
  const AgentModel* model_;
  RuntimeOptions opt_;
  std::vector<UncertaintySet> xi_;
  std::vector<ContextVector> ctx_;
  std::vector<HistoryWindow> windows_;
  std::vector<std::vector<ContextVector>> ens_ctx_;
  std::vector<std::vector<UncertaintySet>> trace_;
};

/// Mean action of the context-conditioned policy at the true context.
double oracle_act(const AgentModel& model, const ContextVector& c, const Vec& obs);

/// Mean over the per-context policy means for contexts sampled once per episode.
double ensemble_policy_act(const AgentModel& model, const std::vector<ContextVector>& contexts,
                           const Vec& obs);

}  // namespace sirsa
