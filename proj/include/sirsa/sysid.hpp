#pragma once

#include <deque>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirsa/nn.hpp"
#include "sirsa/pointmass.hpp"
#include "sirsa/rcmdp.hpp"

namespace sirsa {

/// The last H transitions, oldest first. Missing entries (t < H) are zero
/// features with the padding flag set.
class HistoryWindow {
 public:
  explicit HistoryWindow(int length = 1, bool include_reward = false);

  void push(const Transition& tr);
  void clear() { items_.clear(); }
  [[nodiscard]] int length() const { return length_; }
  [[nodiscard]] std::size_t size() const { return items_.size(); }
  [[nodiscard]] bool empty() const { return items_.empty(); }
  [[nodiscard]] int feature_dim() const;
  /// Concatenated (s, a, [r,] s') per slot plus one padding flag per slot.
  [[nodiscard]] Vec features() const;

  static int feature_dim(int length, bool include_reward);

 private:
  int length_;
  bool include_reward_;
  std::deque<Transition> items_;
};

struct SysIdConfig {
  int members = 4;                 // B
  int history = 1;                 // H
  std::vector<int> hidden{64, 64};
  Activation activation = Activation::kRelu;
  AdamConfig adam{1e-3};
  /// Posterior means are clamped to the context space widened by this
  /// fraction of its range on each side.
  double clamp_margin = 0.5;
};

/// One (prior set, history, true context) training example.
struct SysIdSample {
  UncertaintySet prior;
  Vec history;  // HistoryWindow::features()
  ContextVector context;
};

/// B context regressors f_j(mu, sigma, h) -> c. Inputs and targets are
/// expressed in coordinates normalized to the context space.
class SysIdEnsemble {
 public:
  SysIdEnsemble() = default;
  SysIdEnsemble(const SysIdConfig& cfg, ContextSpace space, Rng& rng);

  [[nodiscard]] const SysIdConfig& config() const { return cfg_; }
  [[nodiscard]] const ContextSpace& space() const { return space_; }
  [[nodiscard]] int members() const { return static_cast<int>(nets_.size()); }
  [[nodiscard]] int history_dim() const;
  [[nodiscard]] std::vector<Mlp>& nets() { return nets_; }
  [[nodiscard]] const std::vector<Mlp>& nets() const { return nets_; }
  [[nodiscard]] HistoryWindow make_window() const { return HistoryWindow(cfg_.history, cfg_.history > 1); }

  /// Network input rows for a batch (normalized prior, raw history features).
  [[nodiscard]] Mat inputs(const std::vector<UncertaintySet>& priors, const Mat& histories) const;
  /// Predictions of every member in raw context units: out[j] is n x d.
  [[nodiscard]] std::vector<Mat> member_predictions(const std::vector<UncertaintySet>& priors,
                                                    const Mat& histories) const;

  /// One training step: each sample is routed to one member drawn uniformly;
  /// returns the batch MSE (normalized units) before the update.
  double train_step(const std::vector<SysIdSample>& batch, Rng& rng);

  /// Posterior (mean, population std) over members for each row.
  [[nodiscard]] std::vector<UncertaintySet> infer_posterior(
      const std::vector<UncertaintySet>& priors, const Mat& histories) const;
  [[nodiscard]] UncertaintySet infer_posterior(const UncertaintySet& prior, const Vec& history) const;

  /// Xi_t from Xi_{t-1}; an empty window returns the prior unchanged.
  [[nodiscard]] UncertaintySet recursive_filter_step(const UncertaintySet& prev,
                                                     const HistoryWindow& window) const;

  [[nodiscard]] std::vector<AdamState>& optimizers() { return opt_; }
  [[nodiscard]] nlohmann::json to_json() const;
  static SysIdEnsemble from_json(const nlohmann::json& j);

 private:
  SysIdConfig cfg_;
  ContextSpace space_;
  std::vector<Mlp> nets_;
  std::vector<AdamState> opt_;
};

/// Sum_i log(2 sigma_i + 1e-9): box entropy up to a constant.
double identifiability_proxy(const UncertaintySet& set);

/// Mean and population standard deviation of B member outputs (rows = members).
UncertaintySet ensemble_moments(const Mat& member_outputs);

}  // namespace sirsa
