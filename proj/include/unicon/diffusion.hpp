#pragma once

#include <cstdint>
#include <vector>

#include "unicon/backbone.hpp"
#include "unicon/rng.hpp"

namespace unicon {

enum class ScheduleKind { linear };

struct NoiseSchedule {
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;

  int steps() const { return static_cast<int>(betas.size()); }
};

/// Linear betas from 1e-4 to 2e-2 inclusive; alpha_bars by running product.
NoiseSchedule build_schedule(int steps, ScheduleKind kind = ScheduleKind::linear);

/// sqrt(ab[t]) * x0 + sqrt(1 - ab[t]) * eps, per image.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched);
/// Batched form: x0 and eps are [B, ...], one timestep per item.
Tensor q_sample(const Tensor& x0, std::span<const int> timesteps, const Tensor& eps, const NoiseSchedule& sched);

struct TrainBatch {
  Tensor x0;                       // [B, H, W, C] in [-1, 1]
  std::vector<int> labels;
  Tensor cond_image;               // [B, H, W, 1] or undefined
  std::vector<std::uint64_t> keys; // per-item noise stream ids
};

/// Per-item draws of (t, eps) from the item's own stream, so the loss does
/// not depend on batch order.
struct NoiseDraw {
  std::vector<int> timesteps;
  Tensor eps;
};
NoiseDraw draw_noise(const TrainBatch& batch, const NoiseSchedule& sched, const CounterRng& rng);

/// mse(model(q_sample(x0, t, eps)), eps) with t ~ U{0..T-1}, eps ~ N(0, I).
Tensor diffusion_loss(Tape& tape, const EpsModel& model, const TrainBatch& batch, const NoiseSchedule& sched,
                      const CounterRng& rng);

struct SamplerOptions {
  bool clip_x0 = false;
};

/// Evenly spaced timesteps from T-1 down to 0, ascending order.
std::vector<int> sampling_timesteps(int total_steps, int num_steps);

/// Strided ancestral DDPM from pure noise over `num_steps` timesteps; no
/// noise is added on the final step. Returns [B, H, W, C].
Tensor sample_loop(const EpsModel& model, const ConditioningInputs& cond, const Shape& image_shape,
                   const NoiseSchedule& sched, int num_steps, CounterRng rng, const SamplerOptions& options = {});

}  // namespace unicon
