#include "unicon/optim.hpp"

#include <cmath>
#include <set>

namespace unicon {

AdamW::AdamW(Module& module, const AdamWConfig& cfg) : cfg_(cfg) {
  if (!(cfg.lr >= 0.0) || !(cfg.eps > 0.0) || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 ||
      cfg.beta2 >= 1.0 || cfg.weight_decay < 0.0) {
    throw Error("AdamW: invalid hyperparameters");
  }
  std::set<std::string> names;
  for (Parameter* p : parameters(module)) {
    if (!p->trainable) continue;
    if (!names.insert(p->name).second) throw Error("AdamW: duplicate parameter name '" + p->name + "'");
    slots_.push_back({p, Tensor::zeros(p->value.shape()), Tensor::zeros(p->value.shape())});
  }
}

void AdamW::step(const GradientMap& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  std::size_t used = 0;
  for (Slot& s : slots_) {
    auto it = grads.find(s.param->name);
    if (it == grads.end()) continue;
    ++used;
    const Tensor& g = it->second;
    if (g.shape() != s.param->value.shape()) throw ShapeError("AdamW: gradient shape mismatch for " + s.param->name);
    float* w = s.param->value.data();
    float* m = s.m.data();
    float* v = s.v.data();
    const float* gd = g.data();
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const double gi = gd[i];
      const double mi = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      const double vi = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      m[i] = static_cast<float>(mi);
      v[i] = static_cast<float>(vi);
      double wi = w[i] * (1.0 - cfg_.lr * cfg_.weight_decay);
      wi -= cfg_.lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
      w[i] = static_cast<float>(wi);
    }
  }
  if (used != grads.size()) throw Error("AdamW: gradient for a parameter this optimizer does not own");
}

PerTag<std::size_t> AdamW::state_bytes() const {
  PerTag<std::size_t> out{};
  for (const Slot& s : slots_) out[index_of(s.param->tag)] += s.m.bytes() + s.v.bytes();
  return out;
}

double gradient_norm(const GradientMap& grads) {
  double sum = 0.0;
  for (const auto& [name, g] : grads) sum += g.array().cast<double>().square().sum();
  return std::sqrt(sum);
}

}  // namespace unicon
