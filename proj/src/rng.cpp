#include "unicon/rng.hpp"

#include <cmath>

namespace unicon {

float CounterRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0, 1] keeps the log finite.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * (1.0 / 9007199254740992.0);
  const double u2 = static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * M_PI * u2;
  spare_ = static_cast<float>(radius * std::sin(angle));
  has_spare_ = true;
  return static_cast<float>(radius * std::cos(angle));
}

Tensor CounterRng::normal_tensor(Shape shape) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = normal();
  return t;
}

Tensor CounterRng::uniform_tensor(Shape shape, float lo, float hi) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(lo, hi);
  return t;
}

}  // namespace unicon
