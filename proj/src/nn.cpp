#include "lcye/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "lcye/ops.hpp"

namespace lcye::nn {

void ParamList::append(const ParamList& other, const std::string& prefix) {
  for (const auto& p : other.params) params.push_back({prefix + p.name, p.var});
  for (const auto& b : other.buffers) buffers.push_back({prefix + b.name, b.tensor});
}

std::vector<ag::Var> ParamList::vars() const {
  std::vector<ag::Var> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(*p.var);
  return out;
}

std::uint64_t checksum(const ParamList& list) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : list.params) {
    const auto& v = p.var->value().values();
    h = fnv1a(v.data(), v.size() * sizeof(double), h);
  }
  for (const auto& b : list.buffers) {
    const auto& v = b.tensor->values();
    h = fnv1a(v.data(), v.size() * sizeof(double), h);
  }
  return h;
}

void set_requires_grad(const ParamList& list, bool on) {
  for (const auto& p : list.params) p.var->set_requires_grad(on);
}

void zero_grad(const ParamList& list) {
  for (const auto& p : list.params) p.var->zero_grad();
}

std::size_t parameter_count(const ParamList& list) {
  std::size_t n = 0;
  for (const auto& p : list.params) n += p.var->value().size();
  return n;
}

void copy_values(const ParamList& from, const ParamList& to) {
  if (from.params.size() != to.params.size() || from.buffers.size() != to.buffers.size()) {
    throw std::invalid_argument("copy_values: parameter lists differ in length");
  }
  for (std::size_t i = 0; i < from.params.size(); ++i) {
    const auto& a = from.params[i];
    const auto& b = to.params[i];
    if (a.name != b.name || a.var->shape() != b.var->shape()) {
      throw std::invalid_argument("copy_values: mismatch at " + a.name + " / " + b.name);
    }
    b.var->mutable_value() = a.var->value();
  }
  for (std::size_t i = 0; i < from.buffers.size(); ++i) {
    if (from.buffers[i].name != to.buffers[i].name || from.buffers[i].tensor->shape() != to.buffers[i].tensor->shape()) {
      throw std::invalid_argument("copy_values: buffer mismatch at " + from.buffers[i].name);
    }
    *to.buffers[i].tensor = *from.buffers[i].tensor;
  }
}

namespace {
Tensor kaiming(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / fan_in);
  for (auto& v : t.values()) v = rng.normal(0.0, std);
  return t;
}
}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, int pad_, bool with_bias, Rng& rng)
    : stride(stride_), pad(pad_) {
  weight = ag::Var(kaiming({out_channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng), true);
  if (with_bias) bias = ag::Var(Tensor({out_channels}, 0.0), true);
}

ag::Var Conv2d::operator()(const ag::Var& x) const { return ag::conv2d(x, weight, bias, stride, pad); }

void Conv2d::collect(ParamList& list, const std::string& prefix) {
  list.add(prefix + "weight", weight);
  if (bias.defined()) list.add(prefix + "bias", bias);
}

Linear::Linear(int in_features, int out_features, bool with_bias, Rng& rng) {
  Tensor w({out_features, in_features});
  const double std = 1.0 / std::sqrt(static_cast<double>(in_features));
  for (auto& v : w.values()) v = rng.normal(0.0, std);
  weight = ag::Var(std::move(w), true);
  if (with_bias) bias = ag::Var(Tensor({out_features}, 0.0), true);
}

ag::Var Linear::operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }

void Linear::collect(ParamList& list, const std::string& prefix) {
  list.add(prefix + "weight", weight);
  if (bias.defined()) list.add(prefix + "bias", bias);
}

BatchNorm::BatchNorm(int channels, double momentum_, double eps_)
    : gamma(Tensor({channels}, 1.0), true),
      beta(Tensor({channels}, 0.0), true),
      running_mean({channels}, 0.0),
      running_var({channels}, 1.0),
      momentum(momentum_),
      eps(eps_) {}

ag::Var BatchNorm::operator()(const ag::Var& x, bool training) {
  if (!training) return ag::batch_norm_eval(x, gamma, beta, running_mean, running_var, eps);
  Tensor mu, var;
  ag::Var y = ag::batch_norm_train(x, gamma, beta, eps, &mu, &var);
  for (std::size_t c = 0; c < mu.size(); ++c) {
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mu[c];
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c];
  }
  return y;
}

void BatchNorm::collect(ParamList& list, const std::string& prefix) {
  list.add(prefix + "gamma", gamma);
  list.add(prefix + "beta", beta);
  list.add_buffer(prefix + "running_mean", running_mean);
  list.add_buffer(prefix + "running_var", running_var);
}

Adam::Adam(std::vector<ag::Var> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be positive");
  for (const auto& p : params_) {
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (p.grad().empty()) continue;
    auto& w = p.mutable_value();
    const auto& g = p.grad();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
      w[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace lcye::nn
