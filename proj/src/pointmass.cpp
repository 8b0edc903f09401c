#include "sirsa/pointmass.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace sirsa {

std::string to_string(EnvVariant v) {
  switch (v) {
    case EnvVariant::kObstacleOnly: return "obstacle";
    case EnvVariant::kVelocityOnly: return "velocity";
    case EnvVariant::kCombined: return "combined";
  }
  return "unknown";
}

EnvVariant variant_from_string(const std::string& s) {
  if (s == "obstacle") return EnvVariant::kObstacleOnly;
  if (s == "velocity") return EnvVariant::kVelocityOnly;
  if (s == "combined") return EnvVariant::kCombined;
  throw std::invalid_argument("unknown env variant '" + s + "' (obstacle|velocity|combined)");
}

Vec PointMassState::observation() const {
  Vec o(kObsDim);
  o << x, y, on_obstacle ? 1.0 : 0.0;
  return o;
}

double pointmass_reward(double x, double y, double radius) {
  const double inside = (x * x + y * y < radius * radius) ? 1.0 : 0.0;
  return 1.0 - inside - PointMassEnv::kYPenalty * std::abs(y);
}

PointMassEnv::PointMassEnv(PointMassConfig cfg) : cfg_(cfg) {
  if (cfg_.horizon <= 0) throw std::invalid_argument("PointMassEnv: horizon must be positive");
  if (!(cfg_.a_max > 0.0)) throw std::invalid_argument("PointMassEnv: a_max must be positive");
}

int PointMassEnv::context_dim() const { return cfg_.variant == EnvVariant::kCombined ? 2 : 1; }

ContextSpace PointMassEnv::context_space() const {
  switch (cfg_.variant) {
    case EnvVariant::kObstacleOnly:
      return {Vec::Constant(1, kRadiusLo), Vec::Constant(1, kRadiusHi)};
    case EnvVariant::kVelocityOnly:
      return {Vec::Constant(1, kVelocityLo), Vec::Constant(1, kVelocityHi)};
    case EnvVariant::kCombined:
      return {Eigen::Vector2d(kRadiusLo, kVelocityLo), Eigen::Vector2d(kRadiusHi, kVelocityHi)};
  }
  throw std::logic_error("unreachable");
}

ContextSpace PointMassEnv::simulator_bounds() const {
  switch (cfg_.variant) {
    case EnvVariant::kObstacleOnly: return {Vec::Constant(1, 0.005), Vec::Constant(1, 0.15)};
    case EnvVariant::kVelocityOnly: return {Vec::Constant(1, 0.01), Vec::Constant(1, 0.2)};
    case EnvVariant::kCombined: return {Eigen::Vector2d(0.005, 0.01), Eigen::Vector2d(0.15, 0.2)};
  }
  throw std::logic_error("unreachable");
}

PointMassContext PointMassEnv::physical(const ContextVector& c) const {
  if (c.size() != context_dim()) {
    throw std::invalid_argument("PointMassEnv: context has dimension " + std::to_string(c.size()) +
                                ", expected " + std::to_string(context_dim()));
  }
  PointMassContext pc{0.5 * (kRadiusLo + kRadiusHi), 0.5 * (kVelocityLo + kVelocityHi)};
  switch (cfg_.variant) {
    case EnvVariant::kObstacleOnly: pc.obstacle_radius = c[0]; break;
    case EnvVariant::kVelocityOnly: pc.velocity = c[0]; break;
    case EnvVariant::kCombined:
      pc.obstacle_radius = c[0];
      pc.velocity = c[1];
      break;
  }
  return pc;
}

PointMassState PointMassEnv::reset(const PointMassContext& c) const {
  PointMassState s{cfg_.start_x, cfg_.start_y, false};
  s.on_obstacle = s.x * s.x + s.y * s.y < c.obstacle_radius * c.obstacle_radius;
  return s;
}

Transition PointMassEnv::step(PointMassState& state, double action,
                              const PointMassContext& c) const {
  if (!std::isfinite(action)) throw std::invalid_argument("PointMassEnv::step: non-finite action");
  const double a = std::clamp(action, -cfg_.a_max, cfg_.a_max);
  Transition tr;
  tr.s = state.observation();
  tr.a = Vec::Constant(1, a);
  state.x += c.velocity;
  state.y += a;
  state.on_obstacle = state.x * state.x + state.y * state.y <
                      c.obstacle_radius * c.obstacle_radius;
  tr.reward = pointmass_reward(state.x, state.y, c.obstacle_radius);
  tr.s_next = state.observation();
  return tr;
}

double PointMassEnv::episode_return_upper_bound() const {
  return static_cast<double>(cfg_.horizon);
}

std::vector<ContextVector> make_misspecified_contexts(const UncertaintySet& set, double r_level,
                                                      const ContextSpace& clamp_bounds) {
  const auto d = set.dim();
  const double w = 1.0 + r_level;
  std::vector<ContextVector> out;
  for (unsigned mask = 0; mask < (1U << d); ++mask) {
    ContextVector c(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double sign = (mask >> i) & 1U ? 1.0 : -1.0;
      c[i] = set.center[i] + sign * w * set.width[i];
    }
    if (clamp_bounds.dim() == d) c = c.cwiseMax(clamp_bounds.lower).cwiseMin(clamp_bounds.upper);
    out.push_back(std::move(c));
  }
  return out;
}

RolloutResult batch_rollout(const PointMassEnv& env, RolloutPolicy& policy,
                            const std::vector<UncertaintySet>& priors,
                            const std::vector<ContextVector>& contexts, Rng& rng, int horizon) {
  if (priors.size() != contexts.size()) {
    throw std::invalid_argument("batch_rollout: priors/contexts size mismatch");
  }
  const int T = horizon > 0 ? horizon : env.config().horizon;
  const std::size_t n = contexts.size();
  std::vector<PointMassContext> phys;
  std::vector<PointMassState> states;
  for (const auto& c : contexts) {
    phys.push_back(env.physical(c));
    states.push_back(env.reset(phys.back()));
  }
  RolloutResult res;
  res.returns.assign(n, 0.0);
  res.rewards.assign(n, {});
  res.states.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) res.states[i].push_back(states[i]);

  policy.begin(priors, contexts, rng);
  Mat obs(static_cast<Eigen::Index>(n), kObsDim);
  std::vector<Transition> trs(n);
  for (int t = 0; t < T; ++t) {
    for (std::size_t i = 0; i < n; ++i) obs.row(static_cast<Eigen::Index>(i)) = states[i].observation();
    const Vec actions = policy.act(obs, rng);
    for (std::size_t i = 0; i < n; ++i) {
      trs[i] = env.step(states[i], actions[static_cast<Eigen::Index>(i)], phys[i]);
      trs[i].done = (t + 1 == T);
      res.returns[i] += trs[i].reward;
      res.rewards[i].push_back(trs[i].reward);
      res.states[i].push_back(states[i]);
    }
    policy.observe(trs);
  }
  return res;
}

NonstationaryResult nonstationary_rollout(const PointMassEnv& env, RolloutPolicy& policy,
                                          const UncertaintySet& set, int period, int horizon,
                                          Rng& rng) {
  if (period <= 0 || horizon <= 0 || horizon % period != 0) {
    throw std::invalid_argument("nonstationary_rollout: period must divide horizon");
  }
  NonstationaryResult res;
  ContextVector c = sample_context_uniform(set, rng);
  PointMassContext phys = env.physical(c);
  res.segment_contexts.push_back(c);
  PointMassState state = env.reset(phys);
  res.states.push_back(state);
  policy.begin({set}, {c}, rng);
  Mat obs(1, kObsDim);
  for (int t = 0; t < horizon; ++t) {
    if (t > 0 && t % period == 0) {
      c = sample_context_uniform(set, rng);
      phys = env.physical(c);
      res.segment_contexts.push_back(c);
    }
    obs.row(0) = state.observation();
    const Vec a = policy.act(obs, rng);
    Transition tr = env.step(state, a[0], phys);
    tr.done = (t + 1 == horizon);
    res.total_return += tr.reward;
    res.rewards.push_back(tr.reward);
    res.states.push_back(state);
    policy.observe({tr});
  }
  return res;
}

std::uint64_t context_hash(const ContextVector& c) {
  std::uint64_t h = 1469598103934665603ULL;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    std::uint64_t bits = 0;
    const double v = c[i];
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffU;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

}  // namespace sirsa
