#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unicon/rng.hpp"
#include "unicon/tape.hpp"

namespace unicon {

using ParamVisitor = std::function<void(const std::string& path, Parameter&)>;

/// Anything owning parameters. `visit` reports each parameter with its path
/// below `prefix`, in a fixed order.
class Module {
 public:
  virtual ~Module() = default;
  virtual void visit(const std::string& prefix, const ParamVisitor& fn) = 0;
};

std::string join_path(const std::string& prefix, const std::string& name);

void assign_names(Module& module, const std::string& prefix = "");
void set_tag(Module& module, ComponentTag tag);
void set_trainable(Module& module, bool trainable);
std::vector<Parameter*> parameters(Module& module);
std::vector<const Parameter*> parameters(const Module& module);
std::int64_t parameter_count(const Module& module);

/// y = x W + b over the last axis; W is [in, out].
struct Linear : Module {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(int in_features, int out_features, CounterRng& rng);
  static Linear zeros(int in_features, int out_features);

  int in_features() const { return static_cast<int>(weight.value.dim(0)); }
  int out_features() const { return static_cast<int>(weight.value.dim(1)); }
  Tensor forward(Tape& tape, const Tensor& x) const;
  Linear copy() const;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;
};

/// NHWC convolution with bias; weight [k, k, in, out].
struct Conv2d : Module {
  Parameter weight;
  Parameter bias;
  int stride = 1;

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, CounterRng& rng);
  static Conv2d zeros(int in_channels, int out_channels, int kernel);

  int out_channels() const { return static_cast<int>(weight.value.dim(3)); }
  Tensor forward(Tape& tape, const Tensor& x) const;
  Conv2d copy() const;
  void visit(const std::string& prefix, const ParamVisitor& fn) override;
};

/// Constant [B, classes] one-hot rows.
Tensor one_hot(std::span<const int> labels, int classes);
/// Constant [B, dim] sinusoidal timestep features (cos half, then sin half).
Tensor timestep_features(std::span<const int> timesteps, int dim);

}  // namespace unicon
