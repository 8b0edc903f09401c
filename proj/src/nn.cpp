#include "sirsa/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "sirsa/rcmdp.hpp"

namespace sirsa {

std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

MlpGrads& MlpGrads::operator+=(const MlpGrads& other) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].weight += other.layers[i].weight;
    layers[i].bias += other.layers[i].bias;
  }
  return *this;
}

MlpGrads& MlpGrads::operator*=(double s) {
  for (auto& l : layers) {
    l.weight *= s;
    l.bias *= s;
  }
  return *this;
}

double MlpGrads::squared_norm() const {
  double n = 0.0;
  for (const auto& l : layers) n += l.weight.squaredNorm() + l.bias.squaredNorm();
  return n;
}

Mlp::Mlp(std::vector<int> widths, Activation act, Rng& rng, double output_scale)
    : widths_(std::move(widths)), act_(act) {
  if (widths_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output widths");
  for (int w : widths_) {
    if (w <= 0) throw std::invalid_argument("Mlp: widths must be positive");
  }
  for (std::size_t i = 0; i + 1 < widths_.size(); ++i) {
    const int in = widths_[i];
    const int out = widths_[i + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    DenseLayer l{Mat(in, out), Vec(out)};
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = u(rng);
    for (Eigen::Index k = 0; k < l.bias.size(); ++k) l.bias[k] = u(rng);
    if (i + 2 == widths_.size()) {
      l.weight *= output_scale;
      l.bias *= output_scale;
    }
    layers_.push_back(std::move(l));
  }
}

namespace {

void activate(Mat& h, Activation act) {
  if (act == Activation::kRelu) {
    h = h.cwiseMax(0.0);
  } else {
    h = h.array().tanh().matrix();
  }
}

void check_input(const Mat& x, int expected) {
  if (x.cols() != expected) {
    throw std::invalid_argument("Mlp: input has " + std::to_string(x.cols()) +
                                " columns, expected " + std::to_string(expected));
  }
}

}  // namespace

Mat Mlp::forward(const Mat& x) const {
  check_input(x, input_dim());
  Mat h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Mat z = h * layers_[i].weight;
    z.rowwise() += layers_[i].bias.transpose();
    if (i + 1 < layers_.size()) activate(z, act_);
    h = std::move(z);
  }
  return h;
}

Mat Mlp::forward(const Mat& x, Cache& cache) const {
  check_input(x, input_dim());
  cache.inputs.clear();
  cache.inputs.reserve(layers_.size());
  Mat h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    cache.inputs.push_back(h);
    Mat z = h * layers_[i].weight;
    z.rowwise() += layers_[i].bias.transpose();
    if (i + 1 < layers_.size()) activate(z, act_);
    h = std::move(z);
  }
  return h;
}

Mlp::Backward Mlp::backward(const Cache& cache, const Mat& upstream, bool want_params) const {
  if (cache.inputs.size() != layers_.size()) {
    throw std::invalid_argument("Mlp::backward: cache does not match network");
  }
  if (upstream.cols() != output_dim() || upstream.rows() != cache.inputs.front().rows()) {
    throw std::invalid_argument("Mlp::backward: upstream gradient has wrong shape");
  }
  Backward out;
  if (want_params) out.params.layers.resize(layers_.size());
  Mat delta = upstream;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const Mat& in = cache.inputs[k];
    if (want_params) {
      out.params.layers[k].weight = in.transpose() * delta;
      out.params.layers[k].bias = delta.colwise().sum().transpose();
      if (!out.params.layers[k].weight.allFinite() || !out.params.layers[k].bias.allFinite()) {
        throw std::runtime_error("Mlp::backward: non-finite gradient in layer " +
                                 std::to_string(k));
      }
    }
    Mat d_in = delta * layers_[k].weight.transpose();
    if (k > 0) {
      // `in` is the activated output of layer k-1.
      if (act_ == Activation::kRelu) {
        d_in = d_in.cwiseProduct((in.array() > 0.0).cast<double>().matrix());
      } else {
        d_in = d_in.cwiseProduct((1.0 - in.array().square()).matrix());
      }
    }
    delta = std::move(d_in);
  }
  if (!delta.allFinite()) throw std::runtime_error("Mlp::backward: non-finite input gradient");
  out.input = std::move(delta);
  return out;
}

Mat Mlp::input_gradient(const Mat& x, const Mat& upstream) const {
  Cache cache;
  (void)forward(x, cache);
  return backward(cache, upstream, false).input;
}

MlpGrads Mlp::zero_grads() const {
  MlpGrads g;
  for (const auto& l : layers_) {
    g.layers.push_back({Mat::Zero(l.weight.rows(), l.weight.cols()), Vec::Zero(l.bias.size())});
  }
  return g;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

Vec Mlp::flat() const {
  Vec out(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index o = 0;
  for (const auto& l : layers_) {
    out.segment(o, l.weight.size()) = Eigen::Map<const Vec>(l.weight.data(), l.weight.size());
    o += l.weight.size();
    out.segment(o, l.bias.size()) = l.bias;
    o += l.bias.size();
  }
  return out;
}

void Mlp::set_flat(const Vec& theta) {
  if (theta.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw std::invalid_argument("Mlp::set_flat: size mismatch");
  }
  Eigen::Index o = 0;
  for (auto& l : layers_) {
    Eigen::Map<Vec>(l.weight.data(), l.weight.size()) = theta.segment(o, l.weight.size());
    o += l.weight.size();
    l.bias = theta.segment(o, l.bias.size());
    o += l.bias.size();
  }
}

bool Mlp::all_finite() const {
  for (const auto& l : layers_) {
    if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
  }
  return true;
}

Vec flatten(const MlpGrads& g) {
  Eigen::Index n = 0;
  for (const auto& l : g.layers) n += l.weight.size() + l.bias.size();
  Vec out(n);
  Eigen::Index o = 0;
  for (const auto& l : g.layers) {
    out.segment(o, l.weight.size()) = Eigen::Map<const Vec>(l.weight.data(), l.weight.size());
    o += l.weight.size();
    out.segment(o, l.bias.size()) = l.bias;
    o += l.bias.size();
  }
  return out;
}

nlohmann::json Mlp::to_json() const {
  return {{"widths", widths_}, {"activation", to_string(act_)}, {"params", vec_to_json(flat())}};
}

Mlp Mlp::from_json(const nlohmann::json& j) {
  Rng rng(0);
  Mlp net(j.at("widths").get<std::vector<int>>(),
          activation_from_string(j.at("activation").get<std::string>()), rng);
  net.set_flat(vec_from_json(j.at("params")));
  return net;
}

AdamState::AdamState(const Mlp& net, AdamConfig c) : cfg(c), m(net.zero_grads()), v(net.zero_grads()) {}

namespace {

nlohmann::json grads_to_json(const MlpGrads& g) { return vec_to_json(flatten(g)); }

void grads_from_json(MlpGrads& g, const nlohmann::json& j) {
  const Vec flat = vec_from_json(j);
  Eigen::Index o = 0;
  for (auto& l : g.layers) {
    Eigen::Map<Vec>(l.weight.data(), l.weight.size()) = flat.segment(o, l.weight.size());
    o += l.weight.size();
    l.bias = flat.segment(o, l.bias.size());
    o += l.bias.size();
  }
  if (o != flat.size()) throw std::runtime_error("optimizer state size mismatch");
}

}  // namespace

nlohmann::json AdamState::to_json() const {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& l : m.layers) shapes.push_back({l.weight.rows(), l.weight.cols()});
  return {{"lr", cfg.lr},        {"beta1", cfg.beta1}, {"beta2", cfg.beta2},
          {"eps", cfg.eps},      {"step", step},       {"shapes", shapes},
          {"m", grads_to_json(m)}, {"v", grads_to_json(v)}};
}

AdamState AdamState::from_json(const nlohmann::json& j) {
  AdamState s;
  s.cfg = {j.at("lr").get<double>(), j.at("beta1").get<double>(), j.at("beta2").get<double>(),
           j.at("eps").get<double>()};
  s.step = j.at("step").get<long>();
  for (const auto& shape : j.at("shapes")) {
    const auto r = shape.at(0).get<Eigen::Index>();
    const auto c = shape.at(1).get<Eigen::Index>();
    s.m.layers.push_back({Mat::Zero(r, c), Vec::Zero(c)});
  }
  s.v = s.m;
  grads_from_json(s.m, j.at("m"));
  grads_from_json(s.v, j.at("v"));
  return s;
}

void adam_step(Mlp& net, const MlpGrads& grads, AdamState& state) {
  auto& layers = net.layers();
  if (grads.layers.size() != layers.size() || state.m.layers.size() != layers.size()) {
    throw std::invalid_argument("adam_step: layout mismatch");
  }
  state.step += 1;
  const auto& c = state.cfg;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  const double step_size = c.lr / bc1;
  const double inv_sqrt_bc2 = 1.0 / std::sqrt(bc2);
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    if (param.rows() != g.rows() || param.cols() != g.cols()) {
      throw std::invalid_argument("adam_step: gradient shape mismatch");
    }
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    param.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + c.eps);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    update(layers[i].weight, grads.layers[i].weight, state.m.layers[i].weight,
           state.v.layers[i].weight);
    update(layers[i].bias, grads.layers[i].bias, state.m.layers[i].bias, state.v.layers[i].bias);
  }
}

double ScalarAdam::update(double param, double grad) {
  step += 1;
  m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
  v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad * grad;
  const double mhat = m / (1.0 - std::pow(cfg.beta1, static_cast<double>(step)));
  const double vhat = v / (1.0 - std::pow(cfg.beta2, static_cast<double>(step)));
  return param - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
}

void polyak_update(Mlp& target, const Mlp& source, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("polyak_update: tau must be in (0, 1]");
  auto& t = target.layers();
  const auto& s = source.layers();
  if (t.size() != s.size()) throw std::invalid_argument("polyak_update: layout mismatch");
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i].weight.rows() != s[i].weight.rows() || t[i].weight.cols() != s[i].weight.cols()) {
      throw std::invalid_argument("polyak_update: shape mismatch in layer " + std::to_string(i));
    }
    t[i].weight = (1.0 - tau) * t[i].weight + tau * s[i].weight;
    t[i].bias = (1.0 - tau) * t[i].bias + tau * s[i].bias;
  }
}

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = n(rng);
  }
  return m;
}

namespace {

// log(1 - tanh(x)^2) computed without cancellation.
double log1m_tanh_sq(double x) {
  const double ax = std::abs(x);
  return 2.0 * (std::numbers::ln2 - ax - std::log1p(std::exp(-2.0 * ax)));
}

}  // namespace

SquashedGaussian::Sample SquashedGaussian::sample(const Mat& net_out, const Mat& eps) const {
  if (net_out.cols() != 2 * act_dim || eps.cols() != act_dim || eps.rows() != net_out.rows()) {
    throw std::invalid_argument("SquashedGaussian: shape mismatch");
  }
  Sample s;
  s.mean = net_out.leftCols(act_dim);
  const Mat raw = net_out.rightCols(act_dim);
  s.log_std = raw.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  s.clamp_mask = ((raw.array() >= kLogStdMin) && (raw.array() <= kLogStdMax)).cast<double>().matrix();
  s.eps = eps;
  const Mat std = s.log_std.array().exp().matrix();
  s.pre = s.mean + std.cwiseProduct(eps);
  s.action = scale * s.pre.array().tanh().matrix();
  s.log_prob = Vec::Zero(net_out.rows());
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (Eigen::Index i = 0; i < net_out.rows(); ++i) {
    double lp = 0.0;
    for (int k = 0; k < act_dim; ++k) {
      lp += -0.5 * eps(i, k) * eps(i, k) - s.log_std(i, k) - half_log_2pi -
            log1m_tanh_sq(s.pre(i, k));
    }
    s.log_prob[i] = lp;
  }
  return s;
}

Mat SquashedGaussian::mean_action(const Mat& net_out) const {
  return scale * net_out.leftCols(act_dim).array().tanh().matrix();
}

Mat SquashedGaussian::backward(const Sample& s, const Mat& dL_da, const Vec& dL_dlogp) const {
  const Eigen::Index n = s.mean.rows();
  Mat g(n, 2 * act_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < act_dim; ++k) {
      const double u = std::tanh(s.pre(i, k));
      const double std = std::exp(s.log_std(i, k));
      // d logp / d pre = 2 tanh(pre); d logp / d log_std (direct) = -1.
      const double dpre = dL_da(i, k) * scale * (1.0 - u * u) + dL_dlogp[i] * 2.0 * u;
      g(i, k) = dpre;
      g(i, act_dim + k) = (dpre * std * s.eps(i, k) - dL_dlogp[i]) * s.clamp_mask(i, k);
    }
  }
  return g;
}

}  // namespace sirsa
