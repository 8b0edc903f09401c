#include "sirsa/sysid.hpp"

#include <cmath>
#include <stdexcept>

namespace sirsa {

HistoryWindow::HistoryWindow(int length, bool include_reward)
    : length_(length), include_reward_(include_reward) {
  if (length_ < 1) throw std::invalid_argument("HistoryWindow: length must be >= 1");
}

int HistoryWindow::feature_dim(int length, bool include_reward) {
  const int per = kObsDim + kActDim + (include_reward ? 1 : 0) + kObsDim + 1;
  return length * per;
}

int HistoryWindow::feature_dim() const { return feature_dim(length_, include_reward_); }

void HistoryWindow::push(const Transition& tr) {
  items_.push_back(tr);
  while (static_cast<int>(items_.size()) > length_) items_.pop_front();
}

Vec HistoryWindow::features() const {
  Vec f = Vec::Zero(feature_dim());
  const int per = feature_dim() / length_;
  const int pad = length_ - static_cast<int>(items_.size());
  for (int slot = 0; slot < length_; ++slot) {
    const int o = slot * per;
    if (slot < pad) {
      f[o + per - 1] = 1.0;
      continue;
    }
    const auto& tr = items_[static_cast<std::size_t>(slot - pad)];
    int k = o;
    f.segment(k, kObsDim) = tr.s;
    k += kObsDim;
    f.segment(k, kActDim) = tr.a;
    k += kActDim;
    if (include_reward_) f[k++] = tr.reward;
    f.segment(k, kObsDim) = tr.s_next;
  }
  return f;
}

SysIdEnsemble::SysIdEnsemble(const SysIdConfig& cfg, ContextSpace space, Rng& rng)
    : cfg_(cfg), space_(std::move(space)) {
  if (cfg_.members < 2) throw std::invalid_argument("SysIdEnsemble: need at least 2 members");
  const int d = static_cast<int>(space_.dim());
  std::vector<int> widths{2 * d + history_dim()};
  widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  widths.push_back(d);
  for (int j = 0; j < cfg_.members; ++j) {
    nets_.emplace_back(widths, cfg_.activation, rng);
    opt_.emplace_back(nets_.back(), cfg_.adam);
  }
}

int SysIdEnsemble::history_dim() const {
  return HistoryWindow::feature_dim(cfg_.history, cfg_.history > 1);
}

Mat SysIdEnsemble::inputs(const std::vector<UncertaintySet>& priors, const Mat& histories) const {
  const auto n = static_cast<Eigen::Index>(priors.size());
  const Eigen::Index d = space_.dim();
  if (histories.rows() != n || histories.cols() != history_dim()) {
    throw std::invalid_argument("SysIdEnsemble: history batch has wrong shape");
  }
  const Vec mid = space_.midpoint();
  const Vec half = space_.half_range();
  Mat x(n, 2 * d + history_dim());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = priors[static_cast<std::size_t>(i)];
    x.row(i).segment(0, d) = ((p.center - mid).array() / half.array()).transpose();
    x.row(i).segment(d, d) = (p.width.array() / half.array()).transpose();
  }
  x.rightCols(history_dim()) = histories;
  return x;
}

std::vector<Mat> SysIdEnsemble::member_predictions(const std::vector<UncertaintySet>& priors,
                                                   const Mat& histories) const {
  const Mat x = inputs(priors, histories);
  const Vec mid = space_.midpoint();
  const Vec half = space_.half_range();
  std::vector<Mat> out;
  for (const auto& net : nets_) {
    Mat y = net.forward(x);
    y = (y.array().rowwise() * half.transpose().array()).matrix();
    y.rowwise() += mid.transpose();
    out.push_back(std::move(y));
  }
  return out;
}

double SysIdEnsemble::train_step(const std::vector<SysIdSample>& batch, Rng& rng) {
  if (batch.empty()) return 0.0;
  const int B = members();
  const Eigen::Index d = space_.dim();
  const Vec mid = space_.midpoint();
  const Vec half = space_.half_range();
  std::uniform_int_distribution<int> pick(0, B - 1);
  std::vector<std::vector<std::size_t>> routed(static_cast<std::size_t>(B));
  for (std::size_t i = 0; i < batch.size(); ++i) routed[static_cast<std::size_t>(pick(rng))].push_back(i);

  double sse = 0.0;
  for (int j = 0; j < B; ++j) {
    const auto& idx = routed[static_cast<std::size_t>(j)];
    if (idx.empty()) continue;
    std::vector<UncertaintySet> priors;
    Mat hist(static_cast<Eigen::Index>(idx.size()), history_dim());
    Mat target(static_cast<Eigen::Index>(idx.size()), d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto& s = batch[idx[r]];
      priors.push_back(s.prior);
      hist.row(static_cast<Eigen::Index>(r)) = s.history.transpose();
      target.row(static_cast<Eigen::Index>(r)) = ((s.context - mid).array() / half.array()).transpose();
    }
    auto& net = nets_[static_cast<std::size_t>(j)];
    Mlp::Cache cache;
    const Mat pred = net.forward(inputs(priors, hist), cache);
    const Mat err = pred - target;
    const double member_sse = err.squaredNorm();
    if (!std::isfinite(member_sse)) {
      throw std::runtime_error("SysIdEnsemble::train_step: non-finite loss in member " +
                               std::to_string(j));
    }
    sse += member_sse;
    // Gradient of the batch-mean squared error.
    const Mat upstream = err * (2.0 / static_cast<double>(batch.size() * static_cast<std::size_t>(d)));
    const auto grads = net.backward(cache, upstream).params;
    adam_step(net, grads, opt_[static_cast<std::size_t>(j)]);
  }
  return sse / static_cast<double>(batch.size() * static_cast<std::size_t>(d));
}

UncertaintySet ensemble_moments(const Mat& member_outputs) {
  const Vec mean = member_outputs.colwise().mean().transpose();
  const Mat centered = member_outputs.rowwise() - mean.transpose();
  const Vec var = centered.array().square().colwise().sum().transpose() /
                  static_cast<double>(member_outputs.rows());
  return {mean, var.cwiseSqrt()};
}

std::vector<UncertaintySet> SysIdEnsemble::infer_posterior(const std::vector<UncertaintySet>& priors,
                                                           const Mat& histories) const {
  const auto preds = member_predictions(priors, histories);
  const Vec span = space_.upper - space_.lower;
  const Vec lo = space_.lower - cfg_.clamp_margin * span;
  const Vec hi = space_.upper + cfg_.clamp_margin * span;
  std::vector<UncertaintySet> out;
  out.reserve(priors.size());
  Mat m(members(), space_.dim());
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(priors.size()); ++i) {
    for (int j = 0; j < members(); ++j) m.row(j) = preds[static_cast<std::size_t>(j)].row(i);
    auto post = ensemble_moments(m);
    post.center = post.center.cwiseMax(lo).cwiseMin(hi);
    out.push_back(std::move(post));
  }
  return out;
}

UncertaintySet SysIdEnsemble::infer_posterior(const UncertaintySet& prior, const Vec& history) const {
  return infer_posterior(std::vector<UncertaintySet>{prior}, history.transpose()).front();
}

UncertaintySet SysIdEnsemble::recursive_filter_step(const UncertaintySet& prev,
                                                    const HistoryWindow& window) const {
  if (window.empty()) return prev;
  return infer_posterior(prev, window.features());
}

nlohmann::json SysIdEnsemble::to_json() const {
  nlohmann::json nets = nlohmann::json::array();
  nlohmann::json opts = nlohmann::json::array();
  for (const auto& n : nets_) nets.push_back(n.to_json());
  for (const auto& o : opt_) opts.push_back(o.to_json());
  return {{"members", cfg_.members},
          {"history", cfg_.history},
          {"hidden", cfg_.hidden},
          {"activation", to_string(cfg_.activation)},
          {"clamp_margin", cfg_.clamp_margin},
          {"space_lower", vec_to_json(space_.lower)},
          {"space_upper", vec_to_json(space_.upper)},
          {"nets", nets},
          {"optimizers", opts}};
}

SysIdEnsemble SysIdEnsemble::from_json(const nlohmann::json& j) {
  SysIdEnsemble e;
  e.cfg_.members = j.at("members").get<int>();
  e.cfg_.history = j.at("history").get<int>();
  e.cfg_.hidden = j.at("hidden").get<std::vector<int>>();
  e.cfg_.activation = activation_from_string(j.at("activation").get<std::string>());
  e.cfg_.clamp_margin = j.at("clamp_margin").get<double>();
  e.space_ = ContextSpace(vec_from_json(j.at("space_lower")), vec_from_json(j.at("space_upper")));
  for (const auto& n : j.at("nets")) e.nets_.push_back(Mlp::from_json(n));
  for (const auto& o : j.at("optimizers")) e.opt_.push_back(AdamState::from_json(o));
  if (!e.opt_.empty()) e.cfg_.adam = e.opt_.front().cfg;
  return e;
}

double identifiability_proxy(const UncertaintySet& set) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < set.dim(); ++i) h += std::log(2.0 * set.width[i] + 1e-9);
  return h;
}

}  // namespace sirsa
