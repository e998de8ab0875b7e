#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "icare/rng.hpp"
#include "icare/tensor.hpp"

namespace icare {

/// A trainable tensor with its gradient accumulator. The gradient buffer is
/// considered "populated" once zero_grad() has allocated it; backward() then
/// accumulates into it.
template <typename S>
struct Parameter {
  std::string name;
  Tensor<S> value;
  Tensor<S> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)) {}

  bool grad_ready() const { return grad.same_shape(value) && !grad.empty(); }

  void zero_grad() {
    if (!grad.same_shape(value)) grad = Tensor<S>(value.shape());
    grad.set_zero();
  }
};

/// Ordered registry of the parameters of one model. Order is the
/// registration order and fixes initialization draws, optimizer slot
/// layout and checkpoint record order.
template <typename S>
class ParameterSet {
 public:
  void add(Parameter<S>& p) { params_.push_back(&p); }

  const std::vector<Parameter<S>*>& all() const { return params_; }
  std::size_t count() const { return params_.size(); }

  Parameter<S>* find(const std::string& name) const {
    for (auto* p : params_)
      if (p->name == name) return p;
    return nullptr;
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  Index total_size() const {
    Index n = 0;
    for (auto* p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<Parameter<S>*> params_;
};

template <typename S>
struct DenseParams {
  Parameter<S> weight;  // [out x in]
  Parameter<S> bias;    // [out]

  Index out_features() const { return weight.value.extent(0); }
  Index in_features() const { return weight.value.extent(1); }
};

template <typename S>
struct ConvParams {
  Parameter<S> kernel;  // [out_ch x in_ch x kh x kw]
  Parameter<S> bias;    // [out_ch]
  Index stride = 1;
  Index padding = 0;

  Index out_channels() const { return kernel.value.extent(0); }
  Index in_channels() const { return kernel.value.extent(1); }
};

template <typename S>
struct BatchNormParams {
  Parameter<S> gamma;  // [channels]
  Parameter<S> beta;   // [channels]
  Tensor<S> running_mean;
  Tensor<S> running_var;
  S momentum = S(0.9);
  S epsilon = S(1e-5);

  Index channels() const { return gamma.value.extent(0); }
};

struct DropoutConfig {
  double keep_prob = 0.6;
};

struct LossConfig {
  double weight_not_important = 1.0;
  double weight_important = 2.0;
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-8;
};

template <typename S>
struct AdamState {
  std::vector<Tensor<S>> m;
  std::vector<Tensor<S>> v;
  std::int64_t t = 0;

  /// Allocates zeroed first/second moment slots matching the parameter set.
  static AdamState init(const ParameterSet<S>& params) {
    AdamState s;
    for (auto* p : params.all()) {
      s.m.push_back(Tensor<S>(p->value.shape()));
      s.v.push_back(Tensor<S>(p->value.shape()));
    }
    return s;
  }
};

/// Fan-scaled uniform init: U(-sqrt(6/(fan_in+fan_out)), +...).
template <typename S>
void init_uniform_fan(Tensor<S>& t, Index fan_in, Index fan_out, RandomStream& rng) {
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<S>(rng.uniform(-bound, bound));
}

template <typename S>
DenseParams<S> make_dense(const std::string& name, Index in, Index out, RandomStream& rng) {
  DenseParams<S> d;
  d.weight = Parameter<S>(name + ".weight", Tensor<S>({out, in}));
  d.bias = Parameter<S>(name + ".bias", Tensor<S>({out}));
  init_uniform_fan(d.weight.value, in, out, rng);
  return d;
}

template <typename S>
ConvParams<S> make_conv(const std::string& name, Index in_ch, Index out_ch, Index kh, Index kw,
                        Index stride, Index padding, RandomStream& rng) {
  if (kh < 1 || kw < 1 || stride < 1 || padding < 0)
    throw ConfigError("invalid convolution geometry for " + name);
  ConvParams<S> c;
  c.kernel = Parameter<S>(name + ".kernel", Tensor<S>({out_ch, in_ch, kh, kw}));
  c.bias = Parameter<S>(name + ".bias", Tensor<S>({out_ch}));
  c.stride = stride;
  c.padding = padding;
  init_uniform_fan(c.kernel.value, in_ch * kh * kw, out_ch * kh * kw, rng);
  return c;
}

template <typename S>
BatchNormParams<S> make_batchnorm(const std::string& name, Index channels) {
  BatchNormParams<S> b;
  b.gamma = Parameter<S>(name + ".gamma", Tensor<S>::ones({channels}));
  b.beta = Parameter<S>(name + ".beta", Tensor<S>({channels}));
  b.running_mean = Tensor<S>({channels});
  b.running_var = Tensor<S>::ones({channels});
  return b;
}

}  // namespace icare
