#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirsa/nn.hpp"
#include "sirsa/pointmass.hpp"
#include "sirsa/replay.hpp"
#include "sirsa/risk.hpp"
#include "sirsa/sysid.hpp"

namespace sirsa {

enum class Algorithm { kSirsa, kSystemId, kEpopt, kSetEpopt, kWcpg, kSetWcpg, kOracle, kPolicyEnsemble };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

/// What the actor sees besides the observation.
enum class Conditioning { kNone, kSet, kContext, kAlpha, kAlphaSet };
Conditioning conditioning_of(Algorithm a);
bool uses_sysid(Algorithm a);
bool uses_variance_net(Algorithm a);

struct PolicySpec {
  Algorithm algorithm = Algorithm::kSirsa;
  double alpha = 0.5;
  int n_cvar = 50;
  int b_ensemble = 4;
  long t_threshold = 25000;
  bool redq = false;
  int redq_m = 8;
  int n_ens = 5;
  int history = 1;

  /// Throws std::invalid_argument with the offending field.
  void validate() const;
  /// Risk level applied in the second phase (System ID uses the expectation).
  [[nodiscard]] double phase2_alpha() const;
};

struct TrainConfig {
  long budget = 50000;  // gradient steps
  int batch_size = 64;
  int cvar_batch_size = 32;
  int grad_steps_per_episode = 50;
  int warmup_episodes = 10;
  double gamma = 0.99;
  double tau = 0.005;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double sysid_lr = 1e-3;
  double temperature_lr = 3e-4;
  double varnet_lr = 3e-4;
  double init_temperature = 0.1;
  std::vector<int> hidden{64, 64};
  std::vector<int> varnet_hidden{256, 256};
  std::vector<double> obs_scale{1.0, 1.0, 1.0};
  std::size_t buffer_capacity = 100000;
  double phase1_degenerate_prob = 0.5;
  bool cvar_entropy = true;
  int varnet_samples = 50;
  bool wcpg_literal_form = false;
  long checkpoint_every = 0;
  long log_every_episodes = 1;

  void validate() const;
};

/// Maps raw quantities to network inputs.
struct Encoder {
  ContextSpace space;
  double a_max = 0.05;
  Vec obs_scale = Vec::Ones(kObsDim);

  [[nodiscard]] Eigen::Index d() const { return space.dim(); }
  [[nodiscard]] Mat obs(const Mat& raw) const;
  [[nodiscard]] Mat context(const Mat& raw) const;
  [[nodiscard]] Vec set_features(const UncertaintySet& set) const;  // 2d
  [[nodiscard]] int conditioning_dim(Conditioning c) const;
  /// Conditioning row for one sample; unused arguments are ignored.
  [[nodiscard]] Vec conditioning(Conditioning c, const UncertaintySet& set,
                                 const ContextVector& context, double alpha) const;
};

/// Context-conditioned critics Q(s, a, c) with Polyak targets.
/// Two members reproduce the twin-critic minimum; more members enable REDQ.
class CriticBank : public ContextCritic {
 public:
  CriticBank() = default;
  CriticBank(int members, const std::vector<int>& hidden, const Encoder& enc, AdamConfig adam,
             Rng& rng);

  [[nodiscard]] int members() const { return static_cast<int>(nets_.size()); }
  [[nodiscard]] const Encoder& encoder() const { return enc_; }
  [[nodiscard]] std::vector<Mlp>& nets() { return nets_; }
  [[nodiscard]] const std::vector<Mlp>& nets() const { return nets_; }
  [[nodiscard]] std::vector<Mlp>& targets() { return targets_; }
  [[nodiscard]] std::vector<AdamState>& optimizers() { return opt_; }

  [[nodiscard]] Mat inputs(const Mat& states, const Mat& actions, const Mat& contexts) const;
  /// Per-member Q values (n x M).
  [[nodiscard]] Mat all_q(const Mat& states, const Mat& actions, const Mat& contexts,
                          bool target = false) const;
  /// Actor-facing value: minimum of the pair for M = 2, member mean for REDQ.
  void evaluate(const Mat& states, const Mat& actions, const Mat& contexts, Vec& q,
                Mat* dq_da) const override;
  /// Bootstrap value: min over a random pair of target members (all of them when M = 2).
  [[nodiscard]] Vec target_value(const Mat& states, const Mat& actions, const Mat& contexts,
                                 Rng& rng) const;

  /// One regression step of every member toward y; returns the mean 0.5 * squared error.
  double regress(const Mat& states, const Mat& actions, const Mat& contexts, const Vec& y);
  void update_targets(double tau);

  [[nodiscard]] nlohmann::json to_json() const;
  static CriticBank from_json(const nlohmann::json& j, const Encoder& enc);

 private:
  Encoder enc_;
  std::vector<Mlp> nets_;
  std::vector<Mlp> targets_;
  std::vector<AdamState> opt_;
};

/// Everything a trained run produces.
struct AgentModel {
  PolicySpec spec;
  Encoder encoder;
  Mlp actor;
  AdamState actor_opt;
  CriticBank critics;
  double log_temperature = 0.0;
  ScalarAdam temperature_opt;
  std::optional<SysIdEnsemble> ensemble;
  std::optional<Mlp> varnet;
  std::optional<AdamState> varnet_opt;

  [[nodiscard]] SquashedGaussian head() const { return {kActDim, encoder.a_max}; }
  [[nodiscard]] Conditioning conditioning() const { return conditioning_of(spec.algorithm); }
  [[nodiscard]] double temperature() const { return std::exp(log_temperature); }
  /// Actor input rows: encoded observation followed by the conditioning.
  [[nodiscard]] Mat actor_inputs(const Mat& raw_obs, const Mat& conditioning) const;
};

AgentModel make_agent(const PolicySpec& spec, const TrainConfig& cfg, const PointMassEnv& env,
                      Rng& rng);

struct Batch {
  Mat s, a, s_next, context;
  Vec r, done;
  Mat cond, cond_next;                 // actor conditioning at s and s'
  std::vector<UncertaintySet> xi;      // set used for CVaR / variance targets
  double wcpg_alpha = 1.0;
};

/// Bootstrapped SAC critic step; returns the critic loss. Targets are
/// refreshed by Polyak averaging afterwards.
double critic_update(AgentModel& model, const Batch& batch, double gamma, double tau, Rng& rng);

struct ActorStepStats {
  double loss = 0.0;
  double mean_log_prob = 0.0;
};

/// Reparameterized SAC actor step on Q(s, a, c_true) - temperature * log pi,
/// followed by the temperature update toward entropy -dim(A).
ActorStepStats actor_update_sac(AgentModel& model, const Batch& batch, Rng& rng,
                                bool tune_temperature = true);

/// CVaR actor step over contexts sampled from each transition's set.
ActorStepStats actor_update_cvar(AgentModel& model, const Batch& batch, const RiskConfig& risk,
                                 bool entropy, Rng& rng, bool tune_temperature = true);

/// Closed-form Gaussian CVaR actor step (WCPG family).
ActorStepStats actor_update_wcpg(AgentModel& model, const Batch& batch, bool literal_form,
                                 Rng& rng, bool tune_temperature = true, long* clamped = nullptr);

/// Variance-net regression toward the Monte-Carlo variance of Q over sampled contexts.
double varnet_update(AgentModel& model, const Batch& batch, int samples, Rng& rng);

/// Sample variance (divisor n-1) of min-Q over `samples` contexts drawn from each set.
Vec monte_carlo_q_variance(const CriticBank& critics, const Mat& s, const Mat& a,
                           const std::vector<UncertaintySet>& sets, int samples, Rng& rng);

struct EpisodeRecord {
  std::vector<StoredTransition> transitions;
  std::vector<UncertaintySet> xi_trace;  // Xi_0 .. Xi_T
  double episode_return = 0.0;
};

/// One training episode with the actor conditioned on the current filtered
/// set (SIRSA / System ID) or on the algorithm's fixed conditioning.
EpisodeRecord collect_episode(const AgentModel& model, const PointMassEnv& env,
                              std::size_t context_id, std::size_t set_id, const ContextVector& c,
                              const UncertaintySet& xi0, std::uint64_t episode_id, bool random_actions,
                              double wcpg_alpha, Rng& rng);

/// Alias with the SIRSA naming: always filters through the ensemble.
EpisodeRecord sirsa_rollout(const AgentModel& model, const PointMassEnv& env, std::size_t context_id,
                            std::size_t set_id, const ContextVector& c, const UncertaintySet& xi0,
                            std::uint64_t episode_id, Rng& rng);

struct TrainLogRow {
  long iteration = 0;
  long episode = 0;
  int phase = 1;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double sysid_loss = 0.0;
  double varnet_loss = 0.0;
  double temperature = 0.0;
  double episode_return = 0.0;
};

struct TrainStats {
  long iterations = 0;
  long episodes = 0;
  long sac_actor_steps = 0;
  long risk_actor_steps = 0;  // CVaR or closed-form steps
  long sac_steps_after_threshold = 0;
  long risk_steps_before_threshold = 0;
  long variance_clamps = 0;
  std::vector<TrainLogRow> log;
};

/// Drives SIRSA and the baselines: episode collection, then a fixed number
/// of gradient steps per episode, until `budget` gradient steps are done.
class Trainer {
 public:
  Trainer(PolicySpec spec, TrainConfig cfg, TaskSuite suite, PointMassEnv env, std::uint64_t seed);

  /// Runs until the iteration budget is reached; the callback fires after
  /// every checkpoint interval with the current iteration.
  TrainStats run(const std::function<void(long)>& on_checkpoint = {});

  [[nodiscard]] const AgentModel& model() const { return model_; }
  [[nodiscard]] AgentModel& model() { return model_; }
  [[nodiscard]] const ReplayBuffers& buffers() const { return buffers_; }
  [[nodiscard]] const TrainStats& stats() const { return stats_; }
  [[nodiscard]] Rng& rng() { return rng_; }

  void collect_one_episode();
  void gradient_step();

 private:
  Batch assemble(const std::vector<const StoredTransition*>& rows, bool phase1);
  [[nodiscard]] std::vector<const StoredTransition*> draw_batch(std::size_t n);

  PolicySpec spec_;
  TrainConfig cfg_;
  TaskSuite suite_;
  PointMassEnv env_;
  std::vector<std::pair<std::size_t, ContextVector>> contexts_;
  UncertaintySet max_set_;
  AgentModel model_;
  ReplayBuffers buffers_;
  Rng rng_;
  TrainStats stats_;
  TrainLogRow pending_;
  double last_return_ = 0.0;
};

/// Checkpoint bundle: networks, optimizer state, RNG state, config hash.
nlohmann::json checkpoint_to_json(const AgentModel& model, const std::string& config_hash,
                                  long iteration, const Rng* rng);
AgentModel agent_from_checkpoint(const nlohmann::json& j);
std::string rng_state(const Rng& rng);
void restore_rng(Rng& rng, const std::string& state);

}  // namespace sirsa
