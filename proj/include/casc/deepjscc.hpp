#pragma once

// DeepJSCC baseline: a convolutional autoencoder that maps an image straight to
// real channel symbols and back, trained end to end through the AWGN channel.

#include <cstdint>
#include <memory>
#include <string>

#include <torch/torch.h>

#include "casc/channel.hpp"
#include "casc/checkpoint.hpp"
#include "casc/cifar.hpp"
#include "casc/metrics.hpp"
#include "casc/pipeline.hpp"
#include "casc/tensors.hpp"

namespace casc::baseline {

enum class LossKind { Mse, Lpips };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(std::string_view text);

struct DeepJsccConfig {
  channel::Rational cr = channel::Rational::make(1, 48);
  int64_t image_size = 32;
  int64_t width = 64;
  LossKind loss = LossKind::Mse;

  /// Real channel symbols per image, 2 * n * cr.
  int64_t symbols() const;
  /// Channels of the (image_size / 4)^2 bottleneck.
  int64_t bottleneck_channels() const;
  /// ConfigError unless cr is 1/48 or 1/96 and the shapes divide evenly.
  void validate() const;
};

class DeepJsccImpl : public torch::nn::Module {
 public:
  explicit DeepJsccImpl(DeepJsccConfig cfg);

  /// Unit-power channel input, B x symbols.
  ConditionSignal encode(const ImageBatch& x);
  torch::Tensor decode(const ConditionSignal& y);
  /// encode -> AWGN -> decode; differentiable, deterministic in (x, snr_db, seed).
  torch::Tensor forward(const ImageBatch& x, double snr_db, uint64_t seed);

  const DeepJsccConfig& config() const { return cfg_; }

 private:
  DeepJsccConfig cfg_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Sequential decoder_{nullptr};
};
TORCH_MODULE(DeepJscc);

/// Short system name, "deepjscc-mse" or "deepjscc-lpips".
std::string system_name(LossKind kind);

Checkpoint deepjscc_checkpoint(const DeepJscc& model, const nlohmann::json& extra = {});
DeepJscc deepjscc_from_checkpoint(const Checkpoint& ckpt);

/// Trains with SNR drawn per batch exactly as stage 2 does. The LPIPS loss needs
/// `perceptual_net`.
pipeline::TrainResult train_deepjscc(const data::Dataset& dataset, const DeepJsccConfig& cfg,
                                     const pipeline::TrainConfig& tc,
                                     std::shared_ptr<eval::FeatureNet> perceptual_net = nullptr,
                                     const pipeline::TrainOptions& options = {});

}  // namespace casc::baseline
