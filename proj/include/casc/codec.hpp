#pragma once

// VQ-regularized semantic autoencoder mapping images to latent grids and back.

#include <cstdint>
#include <memory>
#include <vector>

#include <torch/torch.h>

#include "casc/metrics.hpp"
#include "casc/tensors.hpp"

namespace casc::codec {

struct CodecConfig {
  int64_t image_size = 32;
  int64_t base_channels = 128;     // CH
  int64_t downsample_stages = 2;   // M, each halves the spatial size
  int64_t c_lat = 4;
  int64_t codebook_size = 256;
  /// Width multiplier per resolution level; needs downsample_stages + 1 entries.
  std::vector<int64_t> channel_mult{1, 2, 2};
  int64_t num_res_blocks = 1;
  bool use_adversarial_term = false;

  double vq_beta = 0.25;
  double vq_weight = 1.0;
  double perceptual_weight = 1.0;
  double adversarial_weight = 0.1;

  int64_t latent_size() const { return image_size >> downsample_stages; }
  void validate() const;
};

/// Residual block with group normalization and SiLU.
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(ResBlock);

/// Single-head spatial self-attention with residual connection.
class AttnBlockImpl : public torch::nn::Module {
 public:
  explicit AttnBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::GroupNorm norm_{nullptr};
  torch::nn::Conv2d q_{nullptr}, k_{nullptr}, v_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(AttnBlock);

/// Group count used by every normalization layer for `channels`.
int64_t norm_groups(int64_t channels);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_;
};
TORCH_MODULE(Encoder);

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const CodecConfig& cfg);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  torch::nn::Sequential body_;
};
TORCH_MODULE(Decoder);

struct QuantizeResult {
  LatentCode quantized;          // straight-through: value of z_q, gradient of identity w.r.t. z
  torch::Tensor commitment_loss; // scalar, codebook term + beta * commitment term
  torch::Tensor indices;         // B x h x w, int64
};

/// Nearest-codebook quantization of every spatial vector of `z`.
QuantizeResult vq_quantize(const LatentCode& z, const torch::Tensor& codebook, double beta = 0.25);

class SemanticAutoencoderImpl : public torch::nn::Module {
 public:
  explicit SemanticAutoencoderImpl(CodecConfig cfg);

  /// Pre-quantization latent codes.
  LatentCode encode(const ImageBatch& x);
  /// Quantizes `z` against the codebook and decodes to an image batch.
  ImageBatch decode(const LatentCode& z);
  /// Decoder path with the quantization result exposed (used by training).
  std::pair<torch::Tensor, QuantizeResult> decode_with_vq(const LatentCode& z);
  /// Decoder without quantization; input is taken as already quantized.
  torch::Tensor decode_quantized(const torch::Tensor& z_q);

  const CodecConfig& config() const { return cfg_; }
  const torch::Tensor& codebook() const { return codebook_; }
  void set_codebook(const torch::Tensor& values);

 private:
  void check_image(const torch::Tensor& x) const;
  void check_latent(const torch::Tensor& z) const;

  CodecConfig cfg_;
  Encoder encoder_{nullptr};
  Decoder decoder_{nullptr};
  torch::Tensor codebook_;
};
TORCH_MODULE(SemanticAutoencoder);

/// PatchGAN-style discriminator used only when the adversarial term is enabled.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(int64_t width = 64);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_;
};
TORCH_MODULE(PatchDiscriminator);

struct AutoencoderLoss {
  torch::Tensor reconstruction;  // mean absolute error
  torch::Tensor perceptual;      // mean perceptual distance (0 when no network given)
  torch::Tensor vq;              // vq_weight * commitment
  torch::Tensor adversarial;     // generator-side hinge term (0 unless enabled)
  torch::Tensor total;
};

/// Semantic autoencoder training objective. `perceptual` and `discriminator` may be null;
/// a null discriminator with use_adversarial_term set is a ConfigError.
AutoencoderLoss autoencoder_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                                 const torch::Tensor& commitment_loss, const CodecConfig& cfg,
                                 const eval::Lpips* perceptual,
                                 PatchDiscriminator* discriminator = nullptr);

/// Hinge loss for the discriminator update.
torch::Tensor discriminator_hinge_loss(PatchDiscriminator& disc, const torch::Tensor& real,
                                       const torch::Tensor& fake);

}  // namespace casc::codec
