#pragma once

// Noise-prediction U-Net over a square grid. The condition map is concatenated
// channelwise with the noisy input, the timestep enters through a sinusoidal
// embedding, and every 1x1 convolution and time-embedding linear layer carries a
// dynamic branch driven by the condition-aware network.

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "casc/can.hpp"

namespace casc::ldm {

struct UNetConfig {
  int64_t in_channels = 4;         // latent channels (or 3 for the pixel-space proxy)
  int64_t condition_channels = 2;  // L
  int64_t grid_size = 8;           // spatial size of the denoised tensor
  int64_t condition_grid = 8;      // spatial size of the condition map before resizing
  int64_t base_channels = 64;
  std::vector<int64_t> channel_mult{1, 2, 2};  // one entry per resolution level
  int64_t attention_level = 1;                 // level index that gets self-attention

  int64_t out_channels() const { return in_channels; }
  int64_t time_dim() const { return base_channels * 2; }
  int64_t condition_length() const { return condition_channels * condition_grid * condition_grid; }
  void validate() const;
};

/// Sinusoidal embedding of integer timesteps, B -> B x dim.
torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim);

class UNetResBlockImpl : public torch::nn::Module {
 public:
  UNetResBlockImpl(const std::string& id, int64_t c_in, int64_t c_out, int64_t time_dim,
                   std::vector<can::ModulatedLayer>& registry);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb,
                        const can::DynamicWeightSet* w, can::DeliveryLog* log);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  can::ModulatedLayer temb_proj_{nullptr};
  can::ModulatedLayer skip_{nullptr};
};
TORCH_MODULE(UNetResBlock);

class UNetAttnBlockImpl : public torch::nn::Module {
 public:
  UNetAttnBlockImpl(const std::string& id, int64_t channels,
                    std::vector<can::ModulatedLayer>& registry);
  torch::Tensor forward(const torch::Tensor& x, const can::DynamicWeightSet* w,
                        can::DeliveryLog* log);

 private:
  torch::nn::GroupNorm norm_{nullptr};
  can::ModulatedLayer q_{nullptr}, k_{nullptr}, v_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(UNetAttnBlock);

class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(UNetConfig cfg);

  /// Predicted noise with the same shape as `z_t`.
  ///   z_t: B x in_channels x grid x grid
  ///   condition: B x condition_length()
  ///   t: B int64 timesteps in [1, T]
  ///   weights: dynamic weights, or null to run the static network only
  torch::Tensor forward(const torch::Tensor& z_t, const torch::Tensor& condition,
                        const torch::Tensor& t, const can::DynamicWeightSet* weights = nullptr,
                        can::DeliveryLog* log = nullptr);

  /// Condition reshaped to a map and concatenated with z_t (the network input).
  torch::Tensor assemble_input(const torch::Tensor& z_t, const torch::Tensor& condition) const;

  const UNetConfig& config() const { return cfg_; }
  const std::vector<can::ModulatedLayer>& modulated_layers() const { return modulated_; }
  /// Layer groups for building the condition-aware network.
  std::vector<can::LayerGroupSpec> layer_groups() const;

 private:
  UNetConfig cfg_;
  std::vector<can::ModulatedLayer> modulated_;
  can::ModulatedLayer temb_fc1_{nullptr}, temb_fc2_{nullptr};
  torch::nn::Conv2d conv_in_{nullptr};
  std::vector<UNetResBlock> down_res_;
  std::vector<UNetAttnBlock> down_attn_;  // null where the level has no attention
  std::vector<torch::nn::Conv2d> downsample_;
  UNetResBlock mid1_{nullptr}, mid2_{nullptr};
  std::vector<UNetResBlock> up_res_;
  std::vector<torch::nn::Conv2d> upsample_;
  torch::nn::GroupNorm norm_out_{nullptr};
  torch::nn::Conv2d conv_out_{nullptr};
};
TORCH_MODULE(UNet);

}  // namespace casc::ldm
