#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "helpers.hpp"
#include "sirsa/risk.hpp"

using namespace sirsa;

namespace {

double naive_var(std::vector<double> v, double alpha) {
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::floor(alpha * v.size() + 1e-9));
  return v[k - 1];
}

double naive_cvar(std::vector<double> v, double alpha) {
  std::sort(v.begin(), v.end());
  const auto k = static_cast<std::size_t>(std::floor(alpha * v.size() + 1e-9));
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += v[i];
  return s / static_cast<double>(k);
}

// Q(s, a, c) = s0 * c0 - 40 (a - 0.02 c1 - 0.01 s1)^2 + 0.3 a, smooth in a.
class QuadraticCritic : public ContextCritic {
 public:
  void evaluate(const Mat& s, const Mat& a, const Mat& c, Vec& q, Mat* dq_da) const override {
    q.resize(s.rows());
    if (dq_da) dq_da->resize(s.rows(), 1);
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double e = a(i, 0) - 0.02 * c(i, 1) - 0.01 * s(i, 1);
      q[i] = s(i, 0) * c(i, 0) - 40.0 * e * e + 0.3 * a(i, 0);
      if (dq_da) (*dq_da)(i, 0) = -80.0 * e + 0.3;
    }
  }
};

}  // namespace

TEST_SUITE("risk") {

TEST_CASE("VaR and CVaR equal sort-and-slice on random lists") {
  Rng rng(11);
  std::uniform_int_distribution<int> len(1, 64);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 5.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v(len(rng));
    for (auto& x : v) x = trial % 4 == 0 ? std::round(g(rng)) : g(rng);
    double alpha = u(rng);
    if (alpha * v.size() < 1.0) alpha = std::min(1.0, 1.0 / v.size() + 1e-12);
    CHECK(empirical_var(v, alpha) == naive_var(v, alpha));
    CHECK(empirical_cvar(v, alpha) == naive_cvar(v, alpha));
  }
}

TEST_CASE("tail count of one reduces CVaR to the minimum") {
  const std::vector<double> v{3.0, -1.5, 7.0, 0.2};
  CHECK(empirical_cvar(v, 0.25) == -1.5);
  CHECK(empirical_var(v, 0.25) == -1.5);
  CHECK(empirical_cvar(v, 0.3) == -1.5);
}

TEST_CASE("alpha of one gives the sample mean") {
  const std::vector<double> v{0.1, 0.2, 0.3, 0.4, 1.7};
  CHECK(empirical_cvar(v, 1.0) == std::accumulate(v.begin(), v.end(), 0.0) / 5.0);
}

TEST_CASE("invalid risk arguments are rejected") {
  const std::vector<double> v{1.0, 2.0};
  const std::vector<double> none;
  CHECK_THROWS_AS((void)empirical_cvar(none, 0.5), std::invalid_argument);
  CHECK_THROWS_AS((void)empirical_cvar(v, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)empirical_cvar(v, 1.5), std::invalid_argument);
  CHECK_THROWS_AS((void)empirical_cvar(v, 0.4), std::invalid_argument);
  CHECK_THROWS_AS((RiskConfig{0.01, 50}.validate()), std::invalid_argument);
  CHECK_NOTHROW((RiskConfig{0.02, 50}.validate()));
  CHECK(tail_count(0.3, 10) == 3);
}

TEST_CASE("CVaR of many standard normals matches the analytic value") {
  Rng rng(5);
  const int n = 100000;
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> iid(n), strat(n);
  for (int i = 0; i < n; ++i) {
    iid[i] = g(rng);
    strat[i] = std_normal_inverse_cdf((i + u(rng)) / n);
  }
  for (double a : {0.25, 0.5, 0.75}) {
    const double analytic = -std_normal_pdf(std_normal_inverse_cdf(a)) / a;
    // Stratified draws: 1%. Plain draws: four standard errors of the tail mean.
    CHECK(std::abs(empirical_cvar(strat, a) - analytic) < 0.01 * std::abs(analytic));
    const double q = std_normal_inverse_cdf(a);
    const double tail_var = 1.0 + q * analytic - analytic * analytic;
    const double se = std::sqrt((tail_var + (1.0 - a) * (q - analytic) * (q - analytic)) / (a * n));
    CHECK(std::abs(empirical_cvar(iid, a) - analytic) < 4.0 * se);
  }
}

TEST_CASE("normal distribution helpers") {
  CHECK(std_normal_cdf(1.96) == doctest::Approx(0.9750).epsilon(1e-4));
  CHECK(std_normal_cdf(0.0) == 0.5);
  for (double p : {1e-6, 0.01, 0.25, 0.5, 0.9, 0.999999}) {
    CHECK(std::abs(std_normal_cdf(std_normal_inverse_cdf(p)) - p) < 1e-8);
  }
  CHECK_THROWS_AS((void)std_normal_inverse_cdf(0.0), std::invalid_argument);
}

TEST_CASE("Gaussian closed form matches Monte-Carlo CVaR") {
  Rng rng(7);
  for (double sd : {0.5, 2.0}) {
    std::normal_distribution<double> g(3.0, sd);
    std::vector<double> v(400000);
    for (auto& x : v) x = g(rng);
    for (double a : {0.1, 0.25, 0.5, 0.9}) {
      const double mc = empirical_cvar(v, a);
      const double cf = gaussian_cvar_closed_form(3.0, sd * sd, a);
      CHECK(std::abs(cf - mc) < 0.005 * std::abs(mc));
    }
  }
  CHECK(gaussian_cvar_closed_form(4.25, 0.0, 0.3) == 4.25);
  CHECK(gaussian_cvar_closed_form(4.25, 1.0, 1.0) == 4.25);
  CHECK(gaussian_cvar_coefficient(0.5) == doctest::Approx(std_normal_pdf(0.0) / 0.5));
  CHECK(gaussian_cvar_coefficient(0.5, GaussianCvarForm::kLiteral) ==
        doctest::Approx(std_normal_pdf(0.5) / std_normal_cdf(0.5)));
}

TEST_CASE("CVaR actor gradient matches finite differences") {
  Rng rng(9);
  const QuadraticCritic critic;
  const SquashedGaussian head{1, 0.05};
  for (double alpha : {0.2, 0.5, 1.0}) {
    const Mlp actor({5, 16, 2}, Activation::kTanh, rng, 0.3);
    CvarActorBatch batch;
    batch.actor_inputs = standard_normal(6, 5, rng);
    batch.states = standard_normal(6, 3, rng);
    batch.eps = standard_normal(6, 1, rng);
    for (int b = 0; b < 6; ++b) batch.contexts.push_back(standard_normal(10, 2, rng));
    const double temp = 0.05;
    const auto res = cvar_actor_gradient(critic, actor, head, batch, alpha, temp);
    const Vec analytic = flatten(res.grads);
    Mlp probe = actor;
    const Vec theta = actor.flat();
    Vec numeric(theta.size());
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vec t = theta;
      t[i] += h;
      probe.set_flat(t);
      const double up = cvar_actor_gradient(critic, probe, head, batch, alpha, temp).objective;
      t[i] -= 2 * h;
      probe.set_flat(t);
      const double dn = cvar_actor_gradient(critic, probe, head, batch, alpha, temp).objective;
      numeric[i] = (up - dn) / (2 * h);
    }
    CHECK((analytic - numeric).norm() / numeric.norm() < 1e-3);
  }
}

TEST_CASE("CVaR objective ranks contexts by value") {
  const QuadraticCritic critic;
  const SquashedGaussian head{1, 0.05};
  Rng rng(3);
  const Mlp actor({2, 4, 2}, Activation::kRelu, rng);
  CvarActorBatch batch;
  batch.actor_inputs = Mat::Zero(1, 2);
  batch.states = Mat::Zero(1, 3);
  batch.states(0, 0) = 1.0;
  batch.eps = Mat::Zero(1, 1);
  Mat ctx(4, 2);
  ctx << 4.0, 0.0, -2.0, 0.0, 1.0, 0.0, 3.0, 0.0;
  batch.contexts.push_back(ctx);
  const auto full = cvar_actor_gradient(critic, actor, head, batch, 1.0, 0.0);
  const auto tail = cvar_actor_gradient(critic, actor, head, batch, 0.5, 0.0);
  const auto worst = cvar_actor_gradient(critic, actor, head, batch, 0.25, 0.0);
  CHECK(full.mean_cvar - tail.mean_cvar == doctest::Approx((6.0 / 4.0) - (-1.0 / 2.0)));
  CHECK(full.mean_cvar - worst.mean_cvar == doctest::Approx(6.0 / 4.0 + 2.0));
}

}
