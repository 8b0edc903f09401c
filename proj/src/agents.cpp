#include "sirsa/agents.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace sirsa {

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::kSirsa: return "sirsa";
    case Algorithm::kSystemId: return "system_id";
    case Algorithm::kEpopt: return "epopt";
    case Algorithm::kSetEpopt: return "set_epopt";
    case Algorithm::kWcpg: return "wcpg";
    case Algorithm::kSetWcpg: return "set_wcpg";
    case Algorithm::kOracle: return "oracle";
    case Algorithm::kPolicyEnsemble: return "ensemble";
  }
  return "unknown";
}

Algorithm algorithm_from_string(const std::string& s) {
  for (auto a : {Algorithm::kSirsa, Algorithm::kSystemId, Algorithm::kEpopt, Algorithm::kSetEpopt,
                 Algorithm::kWcpg, Algorithm::kSetWcpg, Algorithm::kOracle,
                 Algorithm::kPolicyEnsemble}) {
    if (to_string(a) == s) return a;
  }
  throw std::invalid_argument("unknown algorithm '" + s + "'");
}

Conditioning conditioning_of(Algorithm a) {
  switch (a) {
    case Algorithm::kSirsa:
    case Algorithm::kSystemId:
    case Algorithm::kSetEpopt: return Conditioning::kSet;
    case Algorithm::kEpopt: return Conditioning::kNone;
    case Algorithm::kWcpg: return Conditioning::kAlpha;
    case Algorithm::kSetWcpg: return Conditioning::kAlphaSet;
    case Algorithm::kOracle:
    case Algorithm::kPolicyEnsemble: return Conditioning::kContext;
  }
  return Conditioning::kNone;
}

bool uses_sysid(Algorithm a) { return a == Algorithm::kSirsa || a == Algorithm::kSystemId; }
bool uses_variance_net(Algorithm a) { return a == Algorithm::kWcpg || a == Algorithm::kSetWcpg; }

void PolicySpec::validate() const {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("policy.alpha must lie in (0, 1]");
  if (n_cvar <= 0) throw std::invalid_argument("policy.n_cvar must be positive");
  if (tail_count(alpha, static_cast<std::size_t>(n_cvar)) < 1) {
    throw std::invalid_argument("policy: floor(alpha * n_cvar) must be at least 1");
  }
  if (uses_sysid(algorithm) && b_ensemble < 2) {
    throw std::invalid_argument("policy.b_ensemble must be at least 2");
  }
  if (t_threshold < 0) throw std::invalid_argument("policy.t_threshold must be non-negative");
  if (redq && redq_m < 2) throw std::invalid_argument("policy.redq_m must be at least 2");
  if (n_ens < 1) throw std::invalid_argument("policy.n_ens must be positive");
  if (history < 1) throw std::invalid_argument("policy.history must be positive");
}

double PolicySpec::phase2_alpha() const { return algorithm == Algorithm::kSystemId ? 1.0 : alpha; }

void TrainConfig::validate() const {
  if (budget <= 0) throw std::invalid_argument("train.budget must be positive");
  if (batch_size <= 0 || cvar_batch_size <= 0) throw std::invalid_argument("train batch sizes must be positive");
  if (grad_steps_per_episode <= 0) throw std::invalid_argument("train.grad_steps_per_episode must be positive");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("train.gamma must lie in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("train.tau must lie in (0, 1]");
  if (hidden.empty()) throw std::invalid_argument("train.hidden must list at least one width");
  if (obs_scale.size() != static_cast<std::size_t>(kObsDim)) {
    throw std::invalid_argument("train.obs_scale must have 3 entries");
  }
  if (!(init_temperature > 0.0)) throw std::invalid_argument("train.init_temperature must be positive");
  if (varnet_samples < 2) throw std::invalid_argument("train.varnet_samples must be at least 2");
  if (!(phase1_degenerate_prob >= 0.0 && phase1_degenerate_prob <= 1.0)) {
    throw std::invalid_argument("train.phase1_degenerate_prob must lie in [0, 1]");
  }
}

// ---------------------------------------------------------------- Encoder

Mat Encoder::obs(const Mat& raw) const {
  return (raw.array().rowwise() * obs_scale.transpose().array()).matrix();
}

Mat Encoder::context(const Mat& raw) const {
  const Vec mid = space.midpoint();
  const Vec half = space.half_range();
  return ((raw.rowwise() - mid.transpose()).array().rowwise() / half.transpose().array()).matrix();
}

Vec Encoder::set_features(const UncertaintySet& set) const {
  const Vec mid = space.midpoint();
  const Vec half = space.half_range();
  Vec f(2 * d());
  f << (set.center - mid).cwiseQuotient(half), set.width.cwiseQuotient(half);
  return f;
}

int Encoder::conditioning_dim(Conditioning c) const {
  const int dd = static_cast<int>(d());
  switch (c) {
    case Conditioning::kNone: return 0;
    case Conditioning::kSet: return 2 * dd;
    case Conditioning::kContext: return dd;
    case Conditioning::kAlpha: return 1;
    case Conditioning::kAlphaSet: return 1 + 2 * dd;
  }
  return 0;
}

Vec Encoder::conditioning(Conditioning c, const UncertaintySet& set, const ContextVector& context,
                          double alpha) const {
  switch (c) {
    case Conditioning::kNone: return Vec(0);
    case Conditioning::kSet: return set_features(set);
    case Conditioning::kContext: return this->context(context.transpose()).row(0).transpose();
    case Conditioning::kAlpha: return Vec::Constant(1, alpha);
    case Conditioning::kAlphaSet: {
      Vec v(1 + 2 * d());
      v << alpha, set_features(set);
      return v;
    }
  }
  return Vec(0);
}

// ---------------------------------------------------------------- CriticBank

CriticBank::CriticBank(int members, const std::vector<int>& hidden, const Encoder& enc,
                       AdamConfig adam, Rng& rng)
    : enc_(enc) {
  if (members < 2) throw std::invalid_argument("CriticBank: need at least 2 critics");
  std::vector<int> widths{kObsDim + kActDim + static_cast<int>(enc.d())};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(1);
  for (int j = 0; j < members; ++j) {
    nets_.emplace_back(widths, Activation::kRelu, rng);
    targets_.push_back(nets_.back());
    opt_.emplace_back(nets_.back(), adam);
  }
}

Mat CriticBank::inputs(const Mat& states, const Mat& actions, const Mat& contexts) const {
  Mat x(states.rows(), kObsDim + kActDim + enc_.d());
  x << enc_.obs(states), actions / enc_.a_max, enc_.context(contexts);
  return x;
}

Mat CriticBank::all_q(const Mat& states, const Mat& actions, const Mat& contexts, bool target) const {
  const Mat x = inputs(states, actions, contexts);
  const auto& nets = target ? targets_ : nets_;
  Mat q(states.rows(), members());
  for (int j = 0; j < members(); ++j) q.col(j) = nets[static_cast<std::size_t>(j)].forward(x).col(0);
  return q;
}

void CriticBank::evaluate(const Mat& states, const Mat& actions, const Mat& contexts, Vec& q,
                          Mat* dq_da) const {
  const Mat x = inputs(states, actions, contexts);
  const Eigen::Index n = x.rows();
  std::vector<Mlp::Cache> caches(nets_.size());
  Mat all(n, members());
  for (int j = 0; j < members(); ++j) {
    all.col(j) = nets_[static_cast<std::size_t>(j)].forward(x, caches[static_cast<std::size_t>(j)]).col(0);
  }
  const bool pair_min = members() == 2;
  Mat weights = Mat::Zero(n, members());
  if (pair_min) {
    for (Eigen::Index i = 0; i < n; ++i) weights(i, all(i, 1) < all(i, 0) ? 1 : 0) = 1.0;
  } else {
    weights.setConstant(1.0 / members());
  }
  q = (all.cwiseProduct(weights)).rowwise().sum();
  if (dq_da == nullptr) return;
  Mat grad_in = Mat::Zero(n, x.cols());
  for (int j = 0; j < members(); ++j) {
    const Mat up = weights.col(j);
    grad_in += nets_[static_cast<std::size_t>(j)]
                   .backward(caches[static_cast<std::size_t>(j)], up, false)
                   .input;
  }
  *dq_da = grad_in.middleCols(kObsDim, kActDim) / enc_.a_max;
}

Vec CriticBank::target_value(const Mat& states, const Mat& actions, const Mat& contexts,
                             Rng& rng) const {
  const Mat q = all_q(states, actions, contexts, true);
  if (members() == 2) return q.rowwise().minCoeff();
  std::uniform_int_distribution<int> pick(0, members() - 1);
  const int i = pick(rng);
  int j = pick(rng);
  while (j == i) j = pick(rng);
  return q.col(i).cwiseMin(q.col(j));
}

double CriticBank::regress(const Mat& states, const Mat& actions, const Mat& contexts, const Vec& y) {
  const Mat x = inputs(states, actions, contexts);
  const auto n = static_cast<double>(x.rows());
  double loss = 0.0;
  for (std::size_t j = 0; j < nets_.size(); ++j) {
    Mlp::Cache cache;
    const Mat pred = nets_[j].forward(x, cache);
    const Vec err = pred.col(0) - y;
    loss += 0.5 * err.squaredNorm() / n;
    const Mat up = err / n;
    adam_step(nets_[j], nets_[j].backward(cache, up).params, opt_[j]);
  }
  return loss / static_cast<double>(nets_.size());
}

void CriticBank::update_targets(double tau) {
  for (std::size_t j = 0; j < nets_.size(); ++j) polyak_update(targets_[j], nets_[j], tau);
}

nlohmann::json CriticBank::to_json() const {
  nlohmann::json nets = nlohmann::json::array();
  nlohmann::json targets = nlohmann::json::array();
  nlohmann::json opts = nlohmann::json::array();
  for (const auto& n : nets_) nets.push_back(n.to_json());
  for (const auto& n : targets_) targets.push_back(n.to_json());
  for (const auto& o : opt_) opts.push_back(o.to_json());
  return {{"nets", nets}, {"targets", targets}, {"optimizers", opts}};
}

CriticBank CriticBank::from_json(const nlohmann::json& j, const Encoder& enc) {
  CriticBank b;
  b.enc_ = enc;
  for (const auto& n : j.at("nets")) b.nets_.push_back(Mlp::from_json(n));
  for (const auto& n : j.at("targets")) b.targets_.push_back(Mlp::from_json(n));
  for (const auto& o : j.at("optimizers")) b.opt_.push_back(AdamState::from_json(o));
  return b;
}

// ---------------------------------------------------------------- AgentModel

Mat AgentModel::actor_inputs(const Mat& raw_obs, const Mat& conditioning) const {
  Mat x(raw_obs.rows(), kObsDim + conditioning.cols());
  x << encoder.obs(raw_obs), conditioning;
  return x;
}

AgentModel make_agent(const PolicySpec& spec, const TrainConfig& cfg, const PointMassEnv& env,
                      Rng& rng) {
  spec.validate();
  cfg.validate();
  AgentModel m;
  m.spec = spec;
  m.encoder.space = env.context_space();
  m.encoder.a_max = env.config().a_max;
  m.encoder.obs_scale = Eigen::Map<const Vec>(cfg.obs_scale.data(), kObsDim);
  const int cond = m.encoder.conditioning_dim(conditioning_of(spec.algorithm));
  std::vector<int> widths{kObsDim + cond};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(2 * kActDim);
  m.actor = Mlp(widths, Activation::kRelu, rng, 0.01);
  m.actor_opt = AdamState(m.actor, {cfg.actor_lr});
  m.critics = CriticBank(spec.redq ? spec.redq_m : 2, cfg.hidden, m.encoder, {cfg.critic_lr}, rng);
  m.log_temperature = std::log(cfg.init_temperature);
  m.temperature_opt.cfg = {cfg.temperature_lr};
  if (uses_sysid(spec.algorithm)) {
    SysIdConfig sc;
    sc.members = spec.b_ensemble;
    sc.history = spec.history;
    sc.hidden = cfg.hidden;
    sc.adam = {cfg.sysid_lr};
    m.ensemble.emplace(sc, env.context_space(), rng);
  }
  if (uses_variance_net(spec.algorithm)) {
    std::vector<int> vw{kObsDim + kActDim + 2 * static_cast<int>(m.encoder.d())};
    vw.insert(vw.end(), cfg.varnet_hidden.begin(), cfg.varnet_hidden.end());
    vw.push_back(1);
    m.varnet = Mlp(vw, Activation::kRelu, rng);
    m.varnet_opt = AdamState(*m.varnet, {cfg.varnet_lr});
  }
  return m;
}

// ---------------------------------------------------------------- updates

namespace {

void update_temperature(AgentModel& model, double mean_log_prob) {
  const double target_entropy = -static_cast<double>(kActDim);
  const double grad = -(mean_log_prob + target_entropy);
  model.log_temperature = model.temperature_opt.update(model.log_temperature, grad);
}

Mat set_centers(const std::vector<UncertaintySet>& sets) {
  Mat c(static_cast<Eigen::Index>(sets.size()), sets.front().dim());
  for (std::size_t i = 0; i < sets.size(); ++i) c.row(static_cast<Eigen::Index>(i)) = sets[i].center.transpose();
  return c;
}

Mat varnet_inputs(const AgentModel& model, const Mat& s, const Mat& a,
                  const std::vector<UncertaintySet>& sets) {
  const auto& enc = model.encoder;
  Mat x(s.rows(), kObsDim + kActDim + 2 * enc.d());
  x.leftCols(kObsDim) = enc.obs(s);
  x.middleCols(kObsDim, kActDim) = a / enc.a_max;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    x.row(i).tail(2 * enc.d()) = enc.set_features(sets[static_cast<std::size_t>(i)]).transpose();
  }
  return x;
}

}  // namespace

double critic_update(AgentModel& model, const Batch& batch, double gamma, double tau, Rng& rng) {
  const auto head = model.head();
  const Mat out = model.actor.forward(model.actor_inputs(batch.s_next, batch.cond_next));
  const auto smp = head.sample(out, standard_normal(out.rows(), kActDim, rng));
  const Vec next_v = model.critics.target_value(batch.s_next, smp.action, batch.context, rng) -
                     model.temperature() * smp.log_prob;
  const Vec y = batch.r + gamma * (1.0 - batch.done.array()).matrix().cwiseProduct(next_v);
  if (!y.allFinite()) throw std::runtime_error("critic_update: non-finite bootstrap target");
  const double loss = model.critics.regress(batch.s, batch.a, batch.context, y);
  model.critics.update_targets(tau);
  return loss;
}

ActorStepStats actor_update_sac(AgentModel& model, const Batch& batch, Rng& rng,
                                bool tune_temperature) {
  const auto head = model.head();
  const auto n = static_cast<double>(batch.s.rows());
  Mlp::Cache cache;
  const Mat out = model.actor.forward(model.actor_inputs(batch.s, batch.cond), cache);
  const auto smp = head.sample(out, standard_normal(out.rows(), kActDim, rng));
  Vec q;
  Mat dq_da;
  model.critics.evaluate(batch.s, smp.action, batch.context, q, &dq_da);
  const double temp = model.temperature();
  ActorStepStats st;
  st.mean_log_prob = smp.log_prob.mean();
  st.loss = temp * st.mean_log_prob - q.mean();
  const Mat g_out = head.backward(smp, -dq_da / n, Vec::Constant(out.rows(), temp / n));
  adam_step(model.actor, model.actor.backward(cache, g_out).params, model.actor_opt);
  if (tune_temperature) update_temperature(model, st.mean_log_prob);
  return st;
}

ActorStepStats actor_update_cvar(AgentModel& model, const Batch& batch, const RiskConfig& risk,
                                 bool entropy, Rng& rng, bool tune_temperature) {
  const double temp = entropy ? model.temperature() : 0.0;
  auto res = cvar_actor_gradient(model.critics, model.actor, model.head(),
                                 model.actor_inputs(batch.s, batch.cond), batch.s, batch.xi, risk,
                                 temp, rng);
  res.grads *= -1.0;
  adam_step(model.actor, res.grads, model.actor_opt);
  if (entropy && tune_temperature) update_temperature(model, res.mean_log_prob);
  return {-res.objective, res.mean_log_prob};
}

ActorStepStats actor_update_wcpg(AgentModel& model, const Batch& batch, bool literal_form,
                                 Rng& rng, bool tune_temperature, long* clamped) {
  if (!model.varnet) throw std::logic_error("actor_update_wcpg: model has no variance network");
  const auto head = model.head();
  const Eigen::Index n = batch.s.rows();
  Mlp::Cache cache;
  const Mat out = model.actor.forward(model.actor_inputs(batch.s, batch.cond), cache);
  const auto smp = head.sample(out, standard_normal(n, kActDim, rng));
  Vec q;
  Mat dq_da;
  model.critics.evaluate(batch.s, smp.action, set_centers(batch.xi), q, &dq_da);

  const Mat vx = varnet_inputs(model, batch.s, smp.action, batch.xi);
  Mlp::Cache vcache;
  const Vec var = model.varnet->forward(vx, vcache).col(0);
  const double k = gaussian_cvar_coefficient(
      batch.wcpg_alpha, literal_form ? GaussianCvarForm::kLiteral : GaussianCvarForm::kStandard);
  Mat dsd_dvar = Mat::Zero(n, 1);
  Vec sd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (var[i] <= 1e-12) {
      sd[i] = 0.0;
      if (clamped != nullptr && var[i] < 0.0) ++*clamped;
    } else {
      sd[i] = std::sqrt(var[i]);
      dsd_dvar(i, 0) = 0.5 / sd[i];
    }
  }
  const Mat dvar_da =
      model.varnet->backward(vcache, dsd_dvar, false).input.middleCols(kObsDim, kActDim) /
      model.encoder.a_max;
  const double temp = model.temperature();
  const Vec cvar = q - k * sd;
  ActorStepStats st;
  st.mean_log_prob = smp.log_prob.mean();
  st.loss = temp * st.mean_log_prob - cvar.mean();
  const Mat dobj_da = dq_da - k * dvar_da;
  const Mat g_out = head.backward(smp, -dobj_da / static_cast<double>(n),
                                  Vec::Constant(n, temp / static_cast<double>(n)));
  adam_step(model.actor, model.actor.backward(cache, g_out).params, model.actor_opt);
  if (tune_temperature) update_temperature(model, st.mean_log_prob);
  return st;
}

Vec monte_carlo_q_variance(const CriticBank& critics, const Mat& s, const Mat& a,
                           const std::vector<UncertaintySet>& sets, int samples, Rng& rng) {
  const Eigen::Index n = s.rows();
  const Eigen::Index d = sets.front().dim();
  Mat rs(n * samples, s.cols());
  Mat ra(n * samples, a.cols());
  Mat rc(n * samples, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    rs.middleRows(i * samples, samples).rowwise() = s.row(i);
    ra.middleRows(i * samples, samples).rowwise() = a.row(i);
    for (int k = 0; k < samples; ++k) {
      rc.row(i * samples + k) = sample_context_uniform(sets[static_cast<std::size_t>(i)], rng).transpose();
    }
  }
  Vec q;
  critics.evaluate(rs, ra, rc, q, nullptr);
  Vec var(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto seg = q.segment(i * samples, samples);
    const double mean = seg.mean();
    var[i] = (seg.array() - mean).square().sum() / static_cast<double>(samples - 1);
  }
  return var;
}

double varnet_update(AgentModel& model, const Batch& batch, int samples, Rng& rng) {
  if (!model.varnet) throw std::logic_error("varnet_update: model has no variance network");
  const Vec target = monte_carlo_q_variance(model.critics, batch.s, batch.a, batch.xi, samples, rng);
  const Mat x = varnet_inputs(model, batch.s, batch.a, batch.xi);
  Mlp::Cache cache;
  const Vec pred = model.varnet->forward(x, cache).col(0);
  const Vec err = pred - target;
  const auto n = static_cast<double>(x.rows());
  const Mat up = err * (2.0 / n);
  adam_step(*model.varnet, model.varnet->backward(cache, up).params, *model.varnet_opt);
  return err.squaredNorm() / n;
}

// ---------------------------------------------------------------- rollouts

EpisodeRecord collect_episode(const AgentModel& model, const PointMassEnv& env,
                              std::size_t context_id, std::size_t set_id, const ContextVector& c,
                              const UncertaintySet& xi0, std::uint64_t episode_id, bool random_actions,
                              double wcpg_alpha, Rng& rng) {
  const auto phys = env.physical(c);
  const auto head = model.head();
  const auto cond_kind = model.conditioning();
  const bool filter = model.ensemble.has_value();
  PointMassState state = env.reset(phys);
  HistoryWindow window = filter ? model.ensemble->make_window() : HistoryWindow(1);
  UncertaintySet xi = xi0;
  EpisodeRecord rec;
  rec.xi_trace.push_back(xi);
  const int T = env.config().horizon;
  std::uniform_real_distribution<double> unif(-env.config().a_max, env.config().a_max);
  for (int t = 0; t < T; ++t) {
    double action = 0.0;
    if (random_actions) {
      action = unif(rng);
    } else {
      const Vec cond = model.encoder.conditioning(cond_kind, xi, c, wcpg_alpha);
      const Mat x = model.actor_inputs(state.observation().transpose(), cond.transpose());
      const auto smp = head.sample(model.actor.forward(x), standard_normal(1, kActDim, rng));
      action = smp.action(0, 0);
    }
    Transition tr = env.step(state, action, phys);
    tr.done = (t + 1 == T);
    window.push(tr);
    const UncertaintySet xi_next = filter ? model.ensemble->recursive_filter_step(xi, window) : xi;

    StoredTransition st;
    st.s = tr.s;
    st.a = tr.a;
    st.reward = tr.reward;
    st.s_next = tr.s_next;
    st.done = tr.done;
    st.context_id = context_id;
    st.set_id = set_id;
    st.context = c;
    st.episode_id = episode_id;
    st.step = t;
    st.xi = xi;
    st.xi_next = xi_next;
    st.history = window.features();
    st.wcpg_alpha = wcpg_alpha;
    rec.transitions.push_back(std::move(st));
    rec.episode_return += tr.reward;
    xi = xi_next;
    rec.xi_trace.push_back(xi);
  }
  for (auto& st : rec.transitions) st.episode_return = rec.episode_return;
  return rec;
}

EpisodeRecord sirsa_rollout(const AgentModel& model, const PointMassEnv& env, std::size_t context_id,
                            std::size_t set_id, const ContextVector& c, const UncertaintySet& xi0,
                            std::uint64_t episode_id, Rng& rng) {
  if (!model.ensemble) throw std::logic_error("sirsa_rollout: model has no system-ID ensemble");
  return collect_episode(model, env, context_id, set_id, c, xi0, episode_id, false, 1.0, rng);
}

// ---------------------------------------------------------------- Trainer

Trainer::Trainer(PolicySpec spec, TrainConfig cfg, TaskSuite suite, PointMassEnv env,
                 std::uint64_t seed)
    : spec_(spec),
      cfg_(std::move(cfg)),
      suite_(std::move(suite)),
      env_(env),
      contexts_(suite_.flat_train_contexts()),
      max_set_(max_uncertainty_set(env_.context_space())),
      buffers_(cfg_.buffer_capacity),
      rng_(seed) {
  if (contexts_.empty()) throw std::invalid_argument("Trainer: suite has no training contexts");
  model_ = make_agent(spec_, cfg_, env_, rng_);
}

void Trainer::collect_one_episode() {
  std::uniform_int_distribution<std::size_t> pick(0, contexts_.size() - 1);
  const std::size_t cid = pick(rng_);
  const auto& [set_id, c] = contexts_[cid];
  const bool whole_space = spec_.algorithm == Algorithm::kEpopt || spec_.algorithm == Algorithm::kWcpg;
  const UncertaintySet& xi0 = whole_space ? max_set_ : suite_.train_sets[set_id];
  std::uniform_real_distribution<double> unit(0.01, 1.0);
  const double wcpg_alpha = unit(rng_);
  const bool random = stats_.episodes < cfg_.warmup_episodes;
  auto rec = collect_episode(model_, env_, cid, set_id, c, xi0,
                             static_cast<std::uint64_t>(stats_.episodes), random, wcpg_alpha, rng_);
  last_return_ = rec.episode_return;
  buffers_.add_episode(std::move(rec.transitions));
  ++stats_.episodes;
}

std::vector<const StoredTransition*> Trainer::draw_batch(std::size_t n) {
  switch (spec_.algorithm) {
    case Algorithm::kEpopt: return epopt_filter_batch(buffers_, n, spec_.alpha, rng_);
    case Algorithm::kSetEpopt: return epopt_filter_batch_per_set(buffers_, n, spec_.alpha, rng_);
    default: return buffers_.sample(n, rng_);
  }
}

Batch Trainer::assemble(const std::vector<const StoredTransition*>& rows, bool phase1) {
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto& enc = model_.encoder;
  const auto kind = model_.conditioning();
  const int cd = enc.conditioning_dim(kind);
  Batch b;
  b.s.resize(n, kObsDim);
  b.a.resize(n, kActDim);
  b.s_next.resize(n, kObsDim);
  b.context.resize(n, enc.d());
  b.r.resize(n);
  b.done.resize(n);
  b.cond.resize(n, cd);
  b.cond_next.resize(n, cd);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (kind == Conditioning::kAlpha || kind == Conditioning::kAlphaSet) {
    b.wcpg_alpha = std::max(0.01, unit(rng_));
  }
  const bool mix_degenerate = uses_sysid(spec_.algorithm) && phase1;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = *rows[static_cast<std::size_t>(i)];
    if (!t.tag_ok()) throw std::logic_error("replay transition tag mismatch");
    b.s.row(i) = t.s.transpose();
    b.a.row(i) = t.a.transpose();
    b.s_next.row(i) = t.s_next.transpose();
    b.context.row(i) = t.context.transpose();
    b.r[i] = t.reward;
    b.done[i] = t.done ? 1.0 : 0.0;
    UncertaintySet xi = t.xi;
    UncertaintySet xi_next = t.xi_next;
    if (mix_degenerate && unit(rng_) < cfg_.phase1_degenerate_prob) {
      xi = xi_next = UncertaintySet(t.context, Vec::Zero(t.context.size()));
    }
    if (cd > 0) {
      b.cond.row(i) = enc.conditioning(kind, xi, t.context, b.wcpg_alpha).transpose();
      b.cond_next.row(i) = enc.conditioning(kind, xi_next, t.context, b.wcpg_alpha).transpose();
    }
    b.xi.push_back(t.xi);
  }
  return b;
}

namespace {

Batch head_rows(const Batch& b, Eigen::Index k) {
  if (k >= b.s.rows()) return b;
  Batch h;
  h.s = b.s.topRows(k);
  h.a = b.a.topRows(k);
  h.s_next = b.s_next.topRows(k);
  h.context = b.context.topRows(k);
  h.r = b.r.head(k);
  h.done = b.done.head(k);
  h.cond = b.cond.topRows(k);
  h.cond_next = b.cond_next.topRows(k);
  h.xi.assign(b.xi.begin(), b.xi.begin() + k);
  h.wcpg_alpha = b.wcpg_alpha;
  return h;
}

}  // namespace

void Trainer::gradient_step() {
  const long i = stats_.iterations;
  const bool phase1 = i < spec_.t_threshold;
  const auto rows = draw_batch(static_cast<std::size_t>(cfg_.batch_size));
  const Batch batch = assemble(rows, phase1);

  pending_.critic_loss = critic_update(model_, batch, cfg_.gamma, cfg_.tau, rng_);

  if (model_.varnet) {
    pending_.varnet_loss = varnet_update(model_, batch, cfg_.varnet_samples, rng_);
  }

  const Algorithm alg = spec_.algorithm;
  ActorStepStats st;
  if (!phase1 && uses_sysid(alg)) {
    const RiskConfig risk{spec_.phase2_alpha(), spec_.n_cvar};
    st = actor_update_cvar(model_, head_rows(batch, cfg_.cvar_batch_size), risk, cfg_.cvar_entropy, rng_);
    ++stats_.risk_actor_steps;
    if (phase1) ++stats_.risk_steps_before_threshold;
  } else if (!phase1 && uses_variance_net(alg)) {
    st = actor_update_wcpg(model_, batch, cfg_.wcpg_literal_form, rng_, true, &stats_.variance_clamps);
    ++stats_.risk_actor_steps;
    if (phase1) ++stats_.risk_steps_before_threshold;
  } else {
    st = actor_update_sac(model_, batch, rng_);
    ++stats_.sac_actor_steps;
    if (!phase1 && (uses_sysid(alg) || uses_variance_net(alg))) ++stats_.sac_steps_after_threshold;
  }
  pending_.actor_loss = st.loss;

  if (model_.ensemble) {
    std::vector<SysIdSample> samples;
    samples.reserve(rows.size());
    for (const auto* t : rows) samples.push_back({t->xi, t->history, t->context});
    pending_.sysid_loss = model_.ensemble->train_step(samples, rng_);
  }
  if (!model_.actor.all_finite()) throw std::runtime_error("training diverged: non-finite actor parameters");
  ++stats_.iterations;
}

TrainStats Trainer::run(const std::function<void(long)>& on_checkpoint) {
  while (stats_.iterations < cfg_.budget) {
    collect_one_episode();
    if (buffers_.size() >= static_cast<std::size_t>(cfg_.batch_size)) {
      for (int k = 0; k < cfg_.grad_steps_per_episode && stats_.iterations < cfg_.budget; ++k) {
        gradient_step();
        if (cfg_.checkpoint_every > 0 && stats_.iterations % cfg_.checkpoint_every == 0 && on_checkpoint) {
          on_checkpoint(stats_.iterations);
        }
      }
    }
    if (cfg_.log_every_episodes > 0 && stats_.episodes % cfg_.log_every_episodes == 0) {
      pending_.iteration = stats_.iterations;
      pending_.episode = stats_.episodes;
      pending_.phase = stats_.iterations < spec_.t_threshold ? 1 : 2;
      pending_.temperature = model_.temperature();
      pending_.episode_return = last_return_;
      stats_.log.push_back(pending_);
    }
  }
  return stats_;
}

// ---------------------------------------------------------------- checkpoints

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (!is) throw std::runtime_error("malformed RNG state in checkpoint");
}

namespace {

nlohmann::json spec_json(const PolicySpec& s) {
  return {{"algorithm", to_string(s.algorithm)}, {"alpha", s.alpha},     {"n_cvar", s.n_cvar},
          {"b_ensemble", s.b_ensemble},          {"t_threshold", s.t_threshold},
          {"redq", s.redq},                      {"redq_m", s.redq_m},   {"n_ens", s.n_ens},
          {"history", s.history}};
}

PolicySpec spec_from(const nlohmann::json& j) {
  PolicySpec s;
  s.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
  s.alpha = j.at("alpha").get<double>();
  s.n_cvar = j.at("n_cvar").get<int>();
  s.b_ensemble = j.at("b_ensemble").get<int>();
  s.t_threshold = j.at("t_threshold").get<long>();
  s.redq = j.at("redq").get<bool>();
  s.redq_m = j.at("redq_m").get<int>();
  s.n_ens = j.at("n_ens").get<int>();
  s.history = j.at("history").get<int>();
  return s;
}

}  // namespace

nlohmann::json checkpoint_to_json(const AgentModel& model, const std::string& config_hash,
                                  long iteration, const Rng* rng) {
  nlohmann::json j;
  j["checkpoint_version"] = 1;
  j["config_hash"] = config_hash;
  j["iteration"] = iteration;
  j["spec"] = spec_json(model.spec);
  j["encoder"] = {{"lower", vec_to_json(model.encoder.space.lower)},
                  {"upper", vec_to_json(model.encoder.space.upper)},
                  {"a_max", model.encoder.a_max},
                  {"obs_scale", vec_to_json(model.encoder.obs_scale)}};
  j["actor"] = model.actor.to_json();
  j["actor_opt"] = model.actor_opt.to_json();
  j["critics"] = model.critics.to_json();
  j["log_temperature"] = model.log_temperature;
  j["temperature_opt"] = {{"lr", model.temperature_opt.cfg.lr},
                          {"m", model.temperature_opt.m},
                          {"v", model.temperature_opt.v},
                          {"step", model.temperature_opt.step}};
  if (model.ensemble) j["ensemble"] = model.ensemble->to_json();
  if (model.varnet) {
    j["varnet"] = model.varnet->to_json();
    j["varnet_opt"] = model.varnet_opt->to_json();
  }
  if (rng != nullptr) j["rng"] = rng_state(*rng);
  return j;
}

AgentModel agent_from_checkpoint(const nlohmann::json& j) {
  if (j.at("checkpoint_version").get<int>() != 1) throw std::runtime_error("unsupported checkpoint_version");
  AgentModel m;
  m.spec = spec_from(j.at("spec"));
  const auto& e = j.at("encoder");
  m.encoder.space = ContextSpace(vec_from_json(e.at("lower")), vec_from_json(e.at("upper")));
  m.encoder.a_max = e.at("a_max").get<double>();
  m.encoder.obs_scale = vec_from_json(e.at("obs_scale"));
  m.actor = Mlp::from_json(j.at("actor"));
  m.actor_opt = AdamState::from_json(j.at("actor_opt"));
  m.critics = CriticBank::from_json(j.at("critics"), m.encoder);
  m.log_temperature = j.at("log_temperature").get<double>();
  const auto& t = j.at("temperature_opt");
  m.temperature_opt.cfg.lr = t.at("lr").get<double>();
  m.temperature_opt.m = t.at("m").get<double>();
  m.temperature_opt.v = t.at("v").get<double>();
  m.temperature_opt.step = t.at("step").get<long>();
  if (j.contains("ensemble")) m.ensemble = SysIdEnsemble::from_json(j.at("ensemble"));
  if (j.contains("varnet")) {
    m.varnet = Mlp::from_json(j.at("varnet"));
    m.varnet_opt = AdamState::from_json(j.at("varnet_opt"));
  }
  return m;
}

}  // namespace sirsa
