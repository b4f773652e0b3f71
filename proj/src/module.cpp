#include "unicon/module.hpp"

#include <cmath>

#include "unicon/ops.hpp"

namespace unicon {

std::string join_path(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

void assign_names(Module& module, const std::string& prefix) {
  module.visit(prefix, [](const std::string& path, Parameter& p) { p.name = path; });
}

void set_tag(Module& module, ComponentTag tag) {
  module.visit("", [tag](const std::string&, Parameter& p) { p.tag = tag; });
}

void set_trainable(Module& module, bool trainable) {
  module.visit("", [trainable](const std::string&, Parameter& p) { p.trainable = trainable; });
}

std::vector<Parameter*> parameters(Module& module) {
  std::vector<Parameter*> out;
  module.visit("", [&](const std::string&, Parameter& p) { out.push_back(&p); });
  return out;
}

std::vector<const Parameter*> parameters(const Module& module) {
  std::vector<const Parameter*> out;
  const_cast<Module&>(module).visit("", [&](const std::string&, Parameter& p) { out.push_back(&p); });
  return out;
}

std::int64_t parameter_count(const Module& module) {
  std::int64_t n = 0;
  for (const Parameter* p : parameters(module)) n += p->value.numel();
  return n;
}

Linear::Linear(int in_features, int out_features, CounterRng& rng) {
  const float limit = std::sqrt(6.0f / static_cast<float>(in_features + out_features));
  weight = Parameter(rng.uniform_tensor({in_features, out_features}, -limit, limit));
  bias = Parameter(Tensor::zeros({out_features}));
}

Linear Linear::zeros(int in_features, int out_features) {
  Linear l;
  l.weight = Parameter(Tensor::zeros({in_features, out_features}));
  l.bias = Parameter(Tensor::zeros({out_features}));
  return l;
}

Tensor Linear::forward(Tape& tape, const Tensor& x) const {
  return ops::add(tape, ops::matmul(tape, x, weight.use(tape)), bias.use(tape));
}

Linear Linear::copy() const {
  Linear l;
  l.weight = weight.copy();
  l.bias = bias.copy();
  return l;
}

void Linear::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_path(prefix, "weight"), weight);
  fn(join_path(prefix, "bias"), bias);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride_, CounterRng& rng) : stride(stride_) {
  // He-uniform over the receptive field.
  const float limit = std::sqrt(6.0f / static_cast<float>(kernel * kernel * in_channels));
  weight = Parameter(rng.uniform_tensor({kernel, kernel, in_channels, out_channels}, -limit, limit));
  bias = Parameter(Tensor::zeros({out_channels}));
}

Conv2d Conv2d::zeros(int in_channels, int out_channels, int kernel) {
  Conv2d c;
  c.weight = Parameter(Tensor::zeros({kernel, kernel, in_channels, out_channels}));
  c.bias = Parameter(Tensor::zeros({out_channels}));
  return c;
}

Tensor Conv2d::forward(Tape& tape, const Tensor& x) const {
  return ops::add(tape, ops::conv2d(tape, x, weight.use(tape), stride), bias.use(tape));
}

Conv2d Conv2d::copy() const {
  Conv2d c;
  c.weight = weight.copy();
  c.bias = bias.copy();
  c.stride = stride;
  return c;
}

void Conv2d::visit(const std::string& prefix, const ParamVisitor& fn) {
  fn(join_path(prefix, "weight"), weight);
  fn(join_path(prefix, "bias"), bias);
}

Tensor one_hot(std::span<const int> labels, int classes) {
  Tensor t({static_cast<std::int64_t>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) throw Error("label " + std::to_string(labels[i]) + " out of range");
    t.data()[i * classes + labels[i]] = 1.0f;
  }
  return t;
}

Tensor timestep_features(std::span<const int> timesteps, int dim) {
  const int half = dim / 2;
  Tensor t({static_cast<std::int64_t>(timesteps.size()), dim});
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    for (int k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * k / half);
      const double angle = timesteps[i] * freq;
      t.data()[i * dim + k] = static_cast<float>(std::cos(angle));
      t.data()[i * dim + half + k] = static_cast<float>(std::sin(angle));
    }
  }
  return t;
}

}  // namespace unicon
