#include "casc/ldm.hpp"

#include <cmath>
#include <string>

namespace casc::ldm {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw ConfigError("noise schedule: T must be >= 1");
  alpha_bars_.reserve(betas_.size());
  double product = 1.0;
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("noise schedule: beta outside (0, 1)");
    product *= 1.0 - b;
    alpha_bars_.push_back(product);
  }
}

double NoiseSchedule::alpha_bar(int64_t t) const {
  if (t == 0) return 1.0;
  return alpha_bars_.at(static_cast<size_t>(t - 1));
}

torch::Tensor NoiseSchedule::alpha_bar_tensor(torch::Dtype dtype) const {
  return torch::tensor(alpha_bars_, torch::TensorOptions().dtype(torch::kDouble)).to(dtype);
}

NoiseSchedule make_schedule(int64_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("make_schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<size_t>(steps));
  for (int64_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[static_cast<size_t>(i)] = beta_start + frac * (beta_end - beta_start);
  }
  return NoiseSchedule(std::move(betas));
}

namespace {

void check_timestep(int64_t t, const NoiseSchedule& s) {
  if (t < 1 || t > s.steps()) {
    throw ArgumentError("timestep " + std::to_string(t) + " outside [1, " +
                        std::to_string(s.steps()) + "]");
  }
}

}  // namespace

LatentCode q_sample(const LatentCode& z0, int64_t t, const torch::Tensor& eps,
                    const NoiseSchedule& schedule) {
  check_timestep(t, schedule);
  if (!eps.sizes().equals(z0.tensor().sizes())) throw ArgumentError("q_sample: eps shape mismatch");
  const double ab = schedule.alpha_bar(t);
  return LatentCode(std::sqrt(ab) * z0.tensor() + std::sqrt(1.0 - ab) * eps);
}

torch::Tensor q_sample(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& schedule) {
  if (t.dim() != 1 || t.size(0) != z0.size(0)) throw ArgumentError("q_sample: need one t per sample");
  if ((t < 1).any().item<bool>() || (t > schedule.steps()).any().item<bool>()) {
    throw ArgumentError("q_sample: timestep outside [1, " + std::to_string(schedule.steps()) + "]");
  }
  auto ab = schedule.alpha_bar_tensor(torch::kDouble).index_select(0, t - 1).view({-1, 1, 1, 1});
  return ab.sqrt().to(z0.dtype()) * z0 + (1.0 - ab).sqrt().to(z0.dtype()) * eps;
}

EpsPredictor unet_predictor(const DenoiserContext& ctx) {
  return [ctx](const torch::Tensor& z_t, int64_t t) {
    auto steps = torch::full({z_t.size(0)}, t, torch::TensorOptions().dtype(torch::kLong));
    return (*ctx.unet)(z_t, ctx.condition, steps, ctx.weights, nullptr);
  };
}

torch::Tensor denoiser_loss(const DenoiserContext& ctx, const torch::Tensor& z0,
                            const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& schedule) {
  auto z_t = q_sample(z0, t, eps, schedule);
  auto eps_hat = (*ctx.unet)(z_t, ctx.condition, t, ctx.weights, nullptr);
  return torch::mean((eps - eps_hat).pow(2));
}

torch::Tensor denoiser_loss(const DenoiserContext& ctx, const torch::Tensor& z0,
                            const NoiseSchedule& schedule, at::Generator& gen) {
  auto t = torch::randint(1, schedule.steps() + 1, {z0.size(0)}, gen,
                          torch::TensorOptions().dtype(torch::kLong));
  auto eps = torch::randn(z0.sizes(), gen, z0.options().requires_grad(false));
  return denoiser_loss(ctx, z0, t, eps, schedule);
}

torch::Tensor p_sample_step(const EpsPredictor& predict, const torch::Tensor& z_t, int64_t t,
                            const NoiseSchedule& schedule, at::Generator& gen) {
  check_timestep(t, schedule);
  const double beta = schedule.beta(t);
  const double alpha = schedule.alpha(t);
  const double alpha_bar = schedule.alpha_bar(t);
  auto eps_hat = predict(z_t, t);
  auto mean = (z_t - (beta / std::sqrt(1.0 - alpha_bar)) * eps_hat) / std::sqrt(alpha);
  if (t == 1) return mean;
  auto xi = torch::randn(z_t.sizes(), gen, z_t.options().requires_grad(false));
  return mean + std::sqrt(beta) * xi;
}

torch::Tensor sample(const EpsPredictor& predict, torch::IntArrayRef shape,
                     const NoiseSchedule& schedule, at::Generator& gen) {
  auto z = torch::randn(shape, gen, torch::TensorOptions().dtype(torch::kFloat));
  for (int64_t t = schedule.steps(); t >= 1; --t) z = p_sample_step(predict, z, t, schedule, gen);
  return z;
}

}  // namespace casc::ldm
