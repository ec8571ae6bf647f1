#pragma once

// Noise schedule, forward diffusion, denoising objective, and the ancestral sampler.

#include <cstdint>
#include <functional>
#include <vector>

#include <torch/torch.h>

#include "casc/can.hpp"
#include "casc/tensors.hpp"
#include "casc/unet.hpp"

namespace casc::ldm {

/// Linear beta schedule with precomputed products. Index t runs over [1, T];
/// alpha_bar(0) == 1.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> betas);

  int64_t steps() const { return static_cast<int64_t>(betas_.size()); }
  double beta(int64_t t) const { return betas_.at(static_cast<size_t>(t - 1)); }
  double alpha(int64_t t) const { return 1.0 - beta(t); }
  double alpha_bar(int64_t t) const;

  const std::vector<double>& betas() const { return betas_; }
  /// alpha_bar for t = 1..T as a float tensor.
  torch::Tensor alpha_bar_tensor(torch::Dtype dtype = torch::kFloat) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

/// Betas interpolated linearly from beta_start to beta_end over T steps.
/// Requires 0 < beta_start <= beta_end < 1 and T >= 1.
NoiseSchedule make_schedule(int64_t steps, double beta_start = 1e-4, double beta_end = 0.02);

/// sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps.
LatentCode q_sample(const LatentCode& z0, int64_t t, const torch::Tensor& eps,
                    const NoiseSchedule& schedule);
/// Per-sample timesteps (B int64).
torch::Tensor q_sample(const torch::Tensor& z0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& schedule);

/// Everything the denoiser sees besides the noisy latent and timestep.
struct DenoiserContext {
  UNet* unet = nullptr;
  torch::Tensor condition;                     // B x d, already scaled
  const can::DynamicWeightSet* weights = nullptr;
};

/// Noise prediction for (z_t, t).
using EpsPredictor = std::function<torch::Tensor(const torch::Tensor& z_t, int64_t t)>;

EpsPredictor unet_predictor(const DenoiserContext& ctx);

/// Mean squared error between eps and the U-Net prediction at (z_t, t).
torch::Tensor denoiser_loss(const DenoiserContext& ctx, const torch::Tensor& z0,
                            const torch::Tensor& t, const torch::Tensor& eps,
                            const NoiseSchedule& schedule);

/// Draws t ~ U{1..T} and eps ~ N(0, I) from `gen`, then evaluates the loss.
torch::Tensor denoiser_loss(const DenoiserContext& ctx, const torch::Tensor& z0,
                            const NoiseSchedule& schedule, at::Generator& gen);

/// One ancestral update z_t -> z_{t-1}; fresh noise is skipped at t = 1.
torch::Tensor p_sample_step(const EpsPredictor& predict, const torch::Tensor& z_t, int64_t t,
                            const NoiseSchedule& schedule, at::Generator& gen);

/// Starts from standard normal noise of `shape` and runs t = T .. 1.
torch::Tensor sample(const EpsPredictor& predict, torch::IntArrayRef shape,
                     const NoiseSchedule& schedule, at::Generator& gen);

}  // namespace casc::ldm
