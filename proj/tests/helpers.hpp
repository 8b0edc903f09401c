#pragma once

#include <functional>

#include "sirsa/nn.hpp"
#include "sirsa/pointmass.hpp"

namespace testing {

/// Scripted policy: action = f(observation row).
class ScriptedPolicy : public sirsa::RolloutPolicy {
 public:
  explicit ScriptedPolicy(std::function<double(const sirsa::Vec&)> f) : f_(std::move(f)) {}
  void begin(const std::vector<sirsa::UncertaintySet>&, const std::vector<sirsa::ContextVector>&,
             sirsa::Rng&) override {}
  sirsa::Vec act(const sirsa::Mat& obs, sirsa::Rng&) override {
    sirsa::Vec a(obs.rows());
    for (Eigen::Index i = 0; i < obs.rows(); ++i) a[i] = f_(obs.row(i).transpose());
    return a;
  }
  void observe(const std::vector<sirsa::Transition>&) override {}

 private:
  std::function<double(const sirsa::Vec&)> f_;
};

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

/// Relative error ||analytic - numeric|| / ||numeric|| of the parameter and
/// input gradients of sum(U .* net(x)), central differences with step h.
struct FdReport {
  double params = 0.0;
  double input = 0.0;
};

inline FdReport fd_check(const sirsa::Mlp& net, const sirsa::Mat& x, const sirsa::Mat& U, double h = 1e-6) {
  sirsa::Mlp::Cache cache;
  (void)net.forward(x, cache);
  const auto bw = net.backward(cache, U);
  const sirsa::Vec analytic = sirsa::flatten(bw.params);
  const auto loss = [&](const sirsa::Mlp& n, const sirsa::Mat& in) { return n.forward(in).cwiseProduct(U).sum(); };
  sirsa::Mlp probe = net;
  const sirsa::Vec theta = net.flat();
  sirsa::Vec numeric(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    sirsa::Vec t = theta;
    t[i] += h;
    probe.set_flat(t);
    const double up = loss(probe, x);
    t[i] -= 2 * h;
    probe.set_flat(t);
    numeric[i] = (up - loss(probe, x)) / (2 * h);
  }
  sirsa::Mat num_in(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      sirsa::Mat xp = x, xm = x;
      xp(r, c) += h;
      xm(r, c) -= h;
      num_in(r, c) = (loss(net, xp) - loss(net, xm)) / (2 * h);
    }
  }
  return {(analytic - numeric).norm() / std::max(numeric.norm(), 1e-12),
          (bw.input - num_in).norm() / std::max(num_in.norm(), 1e-12)};
}

}  // namespace testing
