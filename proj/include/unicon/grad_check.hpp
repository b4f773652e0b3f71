#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "unicon/rng.hpp"
#include "unicon/tape.hpp"

namespace unicon {

using LossFn = std::function<Tensor(Tape&)>;

struct FiniteDifferenceResult {
  double max_relative_error = 0.0;
  std::vector<std::int64_t> indices;
  std::vector<double> analytic;
  std::vector<double> numeric;
  std::vector<double> relative_error;
  /// Indices whose perturbed evaluations were not finite; excluded from the max.
  std::vector<std::int64_t> non_finite;
};

/// Compares backward's gradient for `param` against central differences at
/// the given flat indices: max |analytic - cd| / max(|analytic|, |cd|, 1e-8).
/// `loss` must be deterministic; parameter values are restored afterwards.
FiniteDifferenceResult finite_difference_check(const LossFn& loss, Parameter& param,
                                               std::span<const std::int64_t> indices, float eps);

/// Backward's gradient for `param` (zeros if unreachable).
Tensor analytic_gradient(const LossFn& loss, const Parameter& param);

/// Up to `count` random flat indices of `grad`, drawn among entries with
/// |g| >= min_ratio * rms(g) and |g| >= min_abs. In f32 the central
/// difference carries an absolute rounding floor, so entries far below the
/// tensor's typical gradient cannot be resolved to a relative tolerance.
/// With min_abs == 0 an all-zero gradient draws from every entry; otherwise
/// the result may be empty.
std::vector<std::int64_t> informative_indices(const Tensor& grad, CounterRng& rng, int count,
                                              double min_ratio = 0.25, double min_abs = 0.0);

/// Rounding noise of the loss under perturbations of param[index]: the
/// residual rms of a least-squares quadratic through L(w + k*step),
/// k = -4..4. Does not use the analytic gradient.
double loss_noise_floor(const LossFn& loss, Parameter& param, std::int64_t index, float step = 1e-4f);

/// Smallest |g| whose central difference with step eps stays within relative
/// error tol when the loss noise is `noise_floor` (three standard deviations).
double resolvable_gradient(double noise_floor, float eps, double tol);

}  // namespace unicon
