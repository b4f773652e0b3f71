#include "unicon/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace unicon {

namespace {

double evaluate_precise(const LossFn& loss) {
  Tape tape;
  tape.set_precise(true);
  NoGradGuard no_grad(tape);
  return loss(tape).item_double();
}

}  // namespace

FiniteDifferenceResult finite_difference_check(const LossFn& loss, Parameter& param,
                                               std::span<const std::int64_t> indices, float eps) {
  if (!(eps > 0.0f)) throw Error("finite_difference_check: eps must be positive");
  if (!param.trainable) throw Error("finite_difference_check: parameter '" + param.name + "' is frozen");

  const Tensor analytic = analytic_gradient(loss, param);

  auto evaluate = [&]() { return evaluate_precise(loss); };

  FiniteDifferenceResult result;
  float* values = param.value.data();
  for (const auto index : indices) {
    if (index < 0 || index >= param.value.numel()) throw Error("finite_difference_check: index out of range");
    const float original = values[index];
    const float plus = original + eps;
    const float minus = original - eps;
    values[index] = plus;
    const double loss_plus = evaluate();
    values[index] = minus;
    const double loss_minus = evaluate();
    values[index] = original;

    if (!std::isfinite(loss_plus) || !std::isfinite(loss_minus)) {
      result.non_finite.push_back(index);
      continue;
    }
    // Divide by the perturbation actually representable in f32.
    const double numeric = (loss_plus - loss_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
    const double exact = analytic.at(index);
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
    const double rel = std::abs(exact - numeric) / denom;
    result.indices.push_back(index);
    result.analytic.push_back(exact);
    result.numeric.push_back(numeric);
    result.relative_error.push_back(rel);
    result.max_relative_error = std::max(result.max_relative_error, rel);
  }
  return result;
}

Tensor analytic_gradient(const LossFn& loss, const Parameter& param) {
  Tape tape;
  tape.set_precise(true);
  const Tensor value = loss(tape);
  const GradientMap grads = backward(tape, value);
  auto it = grads.find(param.name);
  return it != grads.end() ? it->second : Tensor::zeros(param.value.shape());
}

std::vector<std::int64_t> informative_indices(const Tensor& grad, CounterRng& rng, int count, double min_ratio,
                                              double min_abs) {
  const double rms = std::sqrt(grad.array().cast<double>().square().mean());
  const double floor = std::max(min_ratio * rms, min_abs);
  std::vector<std::int64_t> pool;
  for (std::int64_t i = 0; i < grad.numel(); ++i) {
    if (floor == 0.0 || std::abs(static_cast<double>(grad.at(i))) >= floor) pool.push_back(i);
  }
  std::vector<std::int64_t> out;
  if (static_cast<int>(pool.size()) <= count) return pool;
  for (int i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

double loss_noise_floor(const LossFn& loss, Parameter& param, std::int64_t index, float step) {
  if (index < 0 || index >= param.value.numel()) throw Error("loss_noise_floor: index out of range");
  float* values = param.value.data();
  const float original = values[index];
  constexpr int kHalf = 4;
  Eigen::MatrixXd design(2 * kHalf + 1, 3);
  Eigen::VectorXd y(2 * kHalf + 1);
  for (int k = -kHalf; k <= kHalf; ++k) {
    values[index] = original + static_cast<float>(k) * step;
    const double d = static_cast<double>(values[index]) - static_cast<double>(original);
    design.row(k + kHalf) << 1.0, d, d * d;
    y(k + kHalf) = evaluate_precise(loss);
  }
  values[index] = original;
  if (!y.allFinite()) return std::numeric_limits<double>::infinity();
  const Eigen::VectorXd coef = design.colPivHouseholderQr().solve(y);
  const Eigen::VectorXd resid = y - design * coef;
  return std::sqrt(resid.squaredNorm() / (design.rows() - design.cols()));
}

double resolvable_gradient(double noise_floor, float eps, double tol) {
  return 3.0 * std::sqrt(2.0) * noise_floor / (2.0 * static_cast<double>(eps) * tol);
}

}  // namespace unicon
