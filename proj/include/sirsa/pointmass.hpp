#pragma once

#include <string>
#include <vector>

#include "sirsa/rcmdp.hpp"

namespace sirsa {

enum class EnvVariant { kObstacleOnly, kVelocityOnly, kCombined };

std::string to_string(EnvVariant v);
EnvVariant variant_from_string(const std::string& s);

/// Physical parameters of one point-mass task.
struct PointMassContext {
  double obstacle_radius = 0.05;
  double velocity = 0.08;
};

struct PointMassState {
  double x = 0.0;
  double y = 0.0;
  bool on_obstacle = false;

  [[nodiscard]] Vec observation() const;
};

inline constexpr int kObsDim = 3;
inline constexpr int kActDim = 1;

struct Transition {
  Vec s;
  Vec a;
  double reward = 0.0;
  Vec s_next;
  bool done = false;
};

struct PointMassConfig {
  EnvVariant variant = EnvVariant::kCombined;
  int horizon = 50;
  double a_max = 0.05;
  double start_x = -2.0;
  double start_y = 0.0;
};

/// Roundabout navigation: constant x-velocity, the action shifts y, reward
/// 1 - [inside obstacle] - 8|y| per step.
class PointMassEnv {
 public:
  static constexpr double kRadiusLo = 0.025;
  static constexpr double kRadiusHi = 0.075;
  static constexpr double kVelocityLo = 0.06;
  static constexpr double kVelocityHi = 0.1;
  static constexpr double kYPenalty = 8.0;

  explicit PointMassEnv(PointMassConfig cfg = {});

  [[nodiscard]] const PointMassConfig& config() const { return cfg_; }
  [[nodiscard]] int context_dim() const;
  /// Table-1 ranges restricted to the variant's uncertain dimensions.
  [[nodiscard]] ContextSpace context_space() const;
  /// Map a d-dimensional context vector to physical parameters; frozen
  /// dimensions take the range midpoint.
  [[nodiscard]] PointMassContext physical(const ContextVector& c) const;
  /// Bounds used to clamp out-of-range contexts so dynamics stay well-defined.
  [[nodiscard]] ContextSpace simulator_bounds() const;

  [[nodiscard]] PointMassState reset(const PointMassContext& c) const;
  /// One step; the action is clamped to [-a_max, a_max]. Throws on non-finite actions.
  [[nodiscard]] Transition step(PointMassState& state, double action,
                                const PointMassContext& c) const;

  [[nodiscard]] double episode_return_upper_bound() const;

 private:
  PointMassConfig cfg_;
};

double pointmass_reward(double x, double y, double radius);

/// All 2^d corners mu + w * sigma with w in {-(1+r), 1+r}^d, clamped to the simulator bounds.
std::vector<ContextVector> make_misspecified_contexts(const UncertaintySet& set, double r_level,
                                                      const ContextSpace& clamp_bounds);

/// Batched episode-level policy interface used by rollouts and evaluation.
/// One call to begin() starts n parallel episodes; act()/observe() then run
/// in lockstep. Implementations keep per-episode state (e.g. filtered sets)
/// and never modify learned parameters.
class RolloutPolicy {
 public:
  virtual ~RolloutPolicy() = default;
  /// priors: the initial uncertainty set of each episode. true_contexts is
  /// consulted only by oracle-style policies.
  virtual void begin(const std::vector<UncertaintySet>& priors,
                     const std::vector<ContextVector>& true_contexts, Rng& rng) = 0;
  /// observations: n x kObsDim. Returns n actions (already within bounds).
  virtual Vec act(const Mat& observations, Rng& rng) = 0;
  virtual void observe(const std::vector<Transition>& transitions) = 0;
};

struct RolloutResult {
  std::vector<double> returns;
  /// rewards[i][t]
  std::vector<std::vector<double>> rewards;
  std::vector<std::vector<PointMassState>> states;
};

/// Roll out len(contexts) episodes in lockstep, each with its prior.
RolloutResult batch_rollout(const PointMassEnv& env, RolloutPolicy& policy,
                            const std::vector<UncertaintySet>& priors,
                            const std::vector<ContextVector>& contexts, Rng& rng,
                            int horizon = -1);

struct NonstationaryResult {
  double total_return = 0.0;
  std::vector<double> rewards;
  std::vector<ContextVector> segment_contexts;
  std::vector<PointMassState> states;
};

/// Single episode whose context is resampled uniformly from the set at t = 0,
/// period, 2 * period, ... Throws unless period divides horizon.
NonstationaryResult nonstationary_rollout(const PointMassEnv& env, RolloutPolicy& policy,
                                          const UncertaintySet& set, int period, int horizon,
                                          Rng& rng);

/// Stable 64-bit hash of a context vector (used in CSV traces and tags).
std::uint64_t context_hash(const ContextVector& c);

}  // namespace sirsa
