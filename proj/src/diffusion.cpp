#include "unicon/diffusion.hpp"

#include <cmath>

#include "unicon/ops.hpp"

namespace unicon {

NoiseSchedule build_schedule(int steps, ScheduleKind) {
  if (steps < 1) throw Error("build_schedule: need at least one step");
  constexpr double start = 1e-4, end = 2e-2;
  NoiseSchedule s;
  double running = 1.0;
  for (int t = 0; t < steps; ++t) {
    const double beta = steps == 1 ? start : start + (end - start) * t / (steps - 1);
    running *= 1.0 - beta;
    s.betas.push_back(beta);
    s.alphas.push_back(1.0 - beta);
    s.alpha_bars.push_back(running);
  }
  return s;
}

namespace {

void check_t(int t, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.steps()) {
    throw Error("timestep " + std::to_string(t) + " outside [0, " + std::to_string(sched.steps()) + ")");
  }
}

}  // namespace

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& sched) {
  const int ts[] = {t};
  Tensor x = x0.view([&] {
    Shape s = x0.shape();
    s.insert(s.begin(), 1);
    return s;
  }());
  return q_sample(x, ts, eps.view(x.shape()), sched).view(x0.shape());
}

Tensor q_sample(const Tensor& x0, std::span<const int> timesteps, const Tensor& eps, const NoiseSchedule& sched) {
  if (x0.shape() != eps.shape()) throw ShapeError("q_sample: eps shape differs from x0");
  if (x0.rank() < 1 || x0.dim(0) != static_cast<std::int64_t>(timesteps.size())) {
    throw ShapeError("q_sample: one timestep per batch item expected");
  }
  Tensor out(x0.shape());
  const std::int64_t per = x0.numel() / std::max<std::int64_t>(x0.dim(0), 1);
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    check_t(timesteps[b], sched);
    const double ab = sched.alpha_bars[timesteps[b]];
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::int64_t i = b * per; i < (std::int64_t(b) + 1) * per; ++i) {
      out.data()[i] = static_cast<float>(a * x0.data()[i] + s * eps.data()[i]);
    }
  }
  return out;
}

NoiseDraw draw_noise(const TrainBatch& batch, const NoiseSchedule& sched, const CounterRng& rng) {
  const auto B = batch.x0.dim(0);
  if (B == 0) throw Error("diffusion_loss: empty batch");
  if (static_cast<std::int64_t>(batch.keys.size()) != B) throw ShapeError("diffusion_loss: one key per item expected");
  NoiseDraw d;
  d.eps = Tensor(batch.x0.shape());
  const std::int64_t per = batch.x0.numel() / B;
  for (std::int64_t b = 0; b < B; ++b) {
    CounterRng item = rng.split(batch.keys[b]);
    d.timesteps.push_back(static_cast<int>(item.below(sched.steps())));
    for (std::int64_t i = 0; i < per; ++i) d.eps.data()[b * per + i] = item.normal();
  }
  return d;
}

Tensor diffusion_loss(Tape& tape, const EpsModel& model, const TrainBatch& batch, const NoiseSchedule& sched,
                      const CounterRng& rng) {
  const NoiseDraw d = draw_noise(batch, sched, rng);
  const Tensor x_t = q_sample(batch.x0, d.timesteps, d.eps, sched);
  ConditioningInputs cond{d.timesteps, batch.labels, batch.cond_image};
  const Tensor pred = model.predict_eps(tape, x_t, cond);
  TagScope scope(tape, ComponentTag::other);
  return ops::mse(tape, pred, d.eps);
}

std::vector<int> sampling_timesteps(int total_steps, int num_steps) {
  if (num_steps < 1 || num_steps > total_steps) {
    throw Error("sampler: steps must lie in [1, " + std::to_string(total_steps) + "]");
  }
  std::vector<int> ts;
  if (num_steps == 1) return {total_steps - 1};
  for (int k = 0; k < num_steps; ++k) {
    ts.push_back(static_cast<int>(std::lround(static_cast<double>(k) * (total_steps - 1) / (num_steps - 1))));
  }
  return ts;
}

Tensor sample_loop(const EpsModel& model, const ConditioningInputs& cond, const Shape& image_shape,
                   const NoiseSchedule& sched, int num_steps, CounterRng rng, const SamplerOptions& options) {
  const auto ts = sampling_timesteps(sched.steps(), num_steps);
  const auto B = static_cast<std::int64_t>(cond.labels.size());
  Shape shape = image_shape;
  shape.insert(shape.begin(), B);
  Tensor x = rng.normal_tensor(shape);
  ConditioningInputs step = cond;
  for (int k = num_steps - 1; k >= 0; --k) {
    const int t = ts[k];
    const double ab = sched.alpha_bars[t];
    const double ab_prev = k > 0 ? sched.alpha_bars[ts[k - 1]] : 1.0;
    const double beta = 1.0 - ab / ab_prev;
    step.timesteps.assign(B, t);
    Tensor eps;
    {
      Tape tape;
      NoGradGuard no_grad(tape);
      eps = model.predict_eps(tape, x, step);
    }
    // Posterior mean of q(x_{t'} | x_t, x0) for the respaced chain.
    const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
    const double ct = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = k > 0 ? std::sqrt(beta * (1.0 - ab_prev) / (1.0 - ab)) : 0.0;
    Tensor next(shape);
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      double x0 = (x.data()[i] - std::sqrt(1.0 - ab) * eps.data()[i]) / std::sqrt(ab);
      if (options.clip_x0) x0 = std::clamp(x0, -1.0, 1.0);
      double v = c0 * x0 + ct * x.data()[i];
      if (k > 0) v += sigma * rng.normal();
      next.data()[i] = static_cast<float>(v);
    }
    x = next;
  }
  return x;
}

}  // namespace unicon
