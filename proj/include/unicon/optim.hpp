#pragma once

#include <vector>

#include "unicon/module.hpp"

namespace unicon {

struct AdamWConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay over the trainable parameters of a
/// module. Moment buffers are allocated up front, one pair per parameter.
class AdamW {
 public:
  AdamW(Module& module, const AdamWConfig& cfg);

  /// Parameters absent from `grads` are left untouched this step.
  void step(const GradientMap& grads);

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }
  std::size_t parameter_count() const { return slots_.size(); }
  PerTag<std::size_t> state_bytes() const;

 private:
  struct Slot {
    Parameter* param;
    Tensor m;
    Tensor v;
  };
  AdamWConfig cfg_;
  std::vector<Slot> slots_;
  std::int64_t t_ = 0;
};

/// L2 norm over all gradient tensors.
double gradient_norm(const GradientMap& grads);

}  // namespace unicon
