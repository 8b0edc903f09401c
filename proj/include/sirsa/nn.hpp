#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sirsa/types.hpp"

namespace sirsa {

enum class Activation { kRelu, kTanh };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
  Mat weight;  // in x out
  Vec bias;    // out
};

/// Gradients share the layout of the parameters they differentiate.
struct MlpGrads {
  std::vector<DenseLayer> layers;

  MlpGrads& operator+=(const MlpGrads& other);
  MlpGrads& operator*=(double s);
  [[nodiscard]] double squared_norm() const;
};

/// Fully connected network with a linear output layer. Rows of the input
/// matrix are samples.
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, hidden..., out}; uniform fan-in initialization.
  Mlp(std::vector<int> widths, Activation act, Rng& rng, double output_scale = 1.0);

  [[nodiscard]] int input_dim() const { return widths_.front(); }
  [[nodiscard]] int output_dim() const { return widths_.back(); }
  [[nodiscard]] const std::vector<int>& widths() const { return widths_; }
  [[nodiscard]] Activation activation() const { return act_; }
  [[nodiscard]] std::vector<DenseLayer>& layers() { return layers_; }
  [[nodiscard]] const std::vector<DenseLayer>& layers() const { return layers_; }

  [[nodiscard]] Mat forward(const Mat& x) const;

  struct Cache {
    std::vector<Mat> inputs;  // input to each layer (post-activation of the previous one)
  };
  [[nodiscard]] Mat forward(const Mat& x, Cache& cache) const;

  struct Backward {
    MlpGrads params;
    Mat input;
  };
  /// Reverse-mode pass for the scalar loss sum(upstream .* forward(x)).
  /// Throws std::runtime_error naming the layer if a gradient is non-finite.
  [[nodiscard]] Backward backward(const Cache& cache, const Mat& upstream,
                                  bool want_params = true) const;
  /// Convenience: forward + backward returning only the input gradient.
  [[nodiscard]] Mat input_gradient(const Mat& x, const Mat& upstream) const;

  [[nodiscard]] MlpGrads zero_grads() const;
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] Vec flat() const;
  void set_flat(const Vec& theta);
  [[nodiscard]] bool all_finite() const;

  [[nodiscard]] nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);

 private:
  std::vector<int> widths_;
  Activation act_ = Activation::kRelu;
  std::vector<DenseLayer> layers_;
};

Vec flatten(const MlpGrads& g);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig cfg;
  MlpGrads m;
  MlpGrads v;
  long step = 0;

  AdamState() = default;
  AdamState(const Mlp& net, AdamConfig c);

  [[nodiscard]] nlohmann::json to_json() const;
  static AdamState from_json(const nlohmann::json& j);
};

/// Bias-corrected Adam step descending along grads.
void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state);

/// Adam on a single scalar (entropy temperature).
struct ScalarAdam {
  AdamConfig cfg;
  double m = 0.0;
  double v = 0.0;
  long step = 0;

  double update(double param, double grad);
};

/// target <- (1 - tau) * target + tau * source, elementwise.
void polyak_update(Mlp& target, const Mlp& source, double tau);

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

/// tanh-squashed Gaussian over a box of half-width `scale`. The network
/// emits [mean | log_std]; log-probabilities are measured in the unit box so
/// the entropy target does not depend on the action scale.
struct SquashedGaussian {
  int act_dim = 1;
  double scale = 1.0;

  struct Sample {
    Mat mean;     // n x act_dim
    Mat log_std;  // clamped
    Mat clamp_mask;  // 1 where log_std was inside the clamp
    Mat eps;
    Mat pre;      // mean + std * eps
    Mat action;   // scale * tanh(pre)
    Vec log_prob;
  };

  /// eps must be n x act_dim standard normal noise (zeros for the mean action).
  [[nodiscard]] Sample sample(const Mat& net_out, const Mat& eps) const;
  [[nodiscard]] Mat mean_action(const Mat& net_out) const;
  /// Gradient w.r.t. the network output of sum_i(dL_da[i] . a_i + dL_dlogp[i] * logp_i).
  [[nodiscard]] Mat backward(const Sample& s, const Mat& dL_da, const Vec& dL_dlogp) const;
};

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

}  // namespace sirsa
