#pragma once

#include <span>
#include <vector>

#include "sirsa/nn.hpp"
#include "sirsa/rcmdp.hpp"

namespace sirsa {

struct RiskConfig {
  double alpha = 0.5;
  int n_samples = 50;

  /// floor(alpha * N), the number of tail samples averaged.
  [[nodiscard]] int tail_count() const;
  /// Throws std::invalid_argument unless alpha in (0, 1] and floor(alpha * N) >= 1.
  void validate() const;
};

int tail_count(double alpha, std::size_t n);

/// Element of rank floor(alpha * N) (1-indexed) of the ascending order.
double empirical_var(std::span<const double> values, double alpha);
/// Mean of the floor(alpha * N) smallest values.
double empirical_cvar(std::span<const double> values, double alpha);

double std_normal_pdf(double x);
/// 0.5 * (1 + erf(x / sqrt(2)))
double std_normal_cdf(double x);
/// Inverse CDF, refined by Newton steps on the erf-based CDF to ~1e-12.
double std_normal_inverse_cdf(double p);

enum class GaussianCvarForm {
  kStandard,  // mean - phi(Phi^-1(alpha)) / alpha * sd
  kLiteral,   // mean - phi(alpha) / Phi(alpha) * sd (compatibility switch)
};

/// Coefficient k(alpha) such that CVaR = mean - k * sd.
double gaussian_cvar_coefficient(double alpha, GaussianCvarForm form = GaussianCvarForm::kStandard);
double gaussian_cvar_closed_form(double q_mean, double q_var, double alpha,
                                 GaussianCvarForm form = GaussianCvarForm::kStandard);

/// Q(s, a, c) together with dQ/da, evaluated row-wise.
class ContextCritic {
 public:
  virtual ~ContextCritic() = default;
  /// states n x S, actions n x A, contexts n x d (raw units). Fills q (n) and,
  /// if dq_da is non-null, the action gradient (n x A).
  virtual void evaluate(const Mat& states, const Mat& actions, const Mat& contexts, Vec& q,
                        Mat* dq_da) const = 0;
};

/// Inputs to the CVaR actor gradient once all randomness is fixed.
struct CvarActorBatch {
  Mat actor_inputs;  // n x actor input dim (state features + conditioning)
  Mat states;        // n x S raw observations handed to the critic
  Mat eps;           // n x A reparameterization noise
  /// contexts[b] is N x d: the samples drawn from the state's set.
  std::vector<Mat> contexts;
};

struct CvarActorResult {
  MlpGrads grads;             // ascent direction of the objective
  double objective = 0.0;     // mean over states of CVaR - temperature * logp
  double mean_cvar = 0.0;
  double mean_var = 0.0;
  double mean_log_prob = 0.0;
};

/// Deterministic core: pathwise gradient of
///   mean_b [ (1/k) sum_{i<=k} Q(s_b, a_b, c_[i]) - temperature * log pi(a_b | s_b) ]
/// where contexts are ranked by Q ascending (ties by index) and k = floor(alpha N).
CvarActorResult cvar_actor_gradient(const ContextCritic& critic, const Mlp& actor,
                                    const SquashedGaussian& head, const CvarActorBatch& batch,
                                    double alpha, double temperature);

/// Sampling wrapper: draws eps and N contexts per state uniformly from sets[b].
CvarActorResult cvar_actor_gradient(const ContextCritic& critic, const Mlp& actor,
                                    const SquashedGaussian& head, const Mat& actor_inputs,
                                    const Mat& states, const std::vector<UncertaintySet>& sets,
                                    const RiskConfig& config, double temperature, Rng& rng);

}  // namespace sirsa
