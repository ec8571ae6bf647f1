#pragma once

// End-to-end transmit/receive chain and the two-stage training procedure.
//
//   x -> encode -> condition_encode -> power_normalize -> AWGN -> CAN weights
//     -> reverse diffusion on the latent grid -> decode -> x_hat

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "casc/can.hpp"
#include "casc/channel.hpp"
#include "casc/checkpoint.hpp"
#include "casc/cifar.hpp"
#include "casc/codec.hpp"
#include "casc/config.hpp"
#include "casc/ldm.hpp"
#include "casc/metrics.hpp"
#include "casc/unet.hpp"

namespace casc::pipeline {

struct TrainConfig {
  int stage = 1;
  int64_t epochs = 500;
  double lr_initial = 4.5e-6;
  int64_t batch_size = 32;
  uint64_t seed = 0;
  std::optional<double> snr_db_train;  // unset: sampled per batch from snr_grid_db
  std::vector<double> snr_grid_db{5.0, 10.0, 15.0, 20.0};
  int64_t eval_images = 64;
  /// Stage defaults taken from the [train] section.
  static TrainConfig from(const CascConfig& cfg, int stage);
  std::string snr_protocol() const;
};

struct LossLogEntry {
  int64_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_seconds = 0.0;
};

/// CSV with header "epoch,loss,lr,wall_seconds".
void write_loss_log(const std::filesystem::path& path, const std::vector<LossLogEntry>& log);

/// Timesteps of a respaced sampler and the matching schedule.
struct RespacedSchedule {
  ldm::NoiseSchedule schedule;
  std::vector<int64_t> timesteps;  // original timestep for each respaced index 1..K
};

/// Keeps `steps` evenly spaced timesteps of `base` with betas recomputed from the
/// retained alpha_bar values. steps == base.steps() reproduces `base`.
RespacedSchedule respace(const ldm::NoiseSchedule& base, int64_t steps);

class CascSystem {
 public:
  /// Fresh modules for `cfg`, initialized from `init_seed`.
  CascSystem(CascConfig cfg, uint64_t init_seed);

  static CascSystem from_checkpoint(const Checkpoint& ckpt);

  /// Stage-1 archive: codec weights and manifest.
  Checkpoint codec_checkpoint(const nlohmann::json& extra = {}) const;
  /// Full archive with every trained component.
  Checkpoint full_checkpoint(const nlohmann::json& extra = {}) const;

  LatentCode encode(const ImageBatch& x);
  /// Noisy received condition signal for `x`.
  ConditionSignal received_condition(const ImageBatch& x, double snr_db, uint64_t seed);
  /// Latent codes recovered by the denoiser from the received signal.
  LatentCode denoise(const ConditionSignal& c_hat, uint64_t seed, std::optional<int64_t> steps = {});
  /// Full chain; deterministic in (x, snr_db, seed).
  ImageBatch transmit(const ImageBatch& x, double snr_db, uint64_t seed,
                      std::optional<int64_t> steps = {});

  bool can_enabled() const { return can_active_; }
  /// Disabling keeps the trained heads but skips weight generation.
  void set_can_enabled(bool enabled);
  bool has_can() const { return static_cast<bool>(can); }

  const CascConfig& config() const { return cfg_; }
  int64_t condition_length() const { return unet->config().condition_length(); }

  codec::SemanticAutoencoder codec{nullptr};
  channel::ConditionEncoder cond_encoder{nullptr};
  can::CanNetwork can{nullptr};
  ldm::UNet unet{nullptr};
  ldm::NoiseSchedule schedule;
  double latent_scale = 1.0;
  nlohmann::json manifest_extra = nlohmann::json::object();

 private:
  nlohmann::json base_manifest(int stage) const;

  CascConfig cfg_;
  bool can_active_ = false;
};

/// Convenience wrapper for CascSystem::transmit.
ImageBatch transmit(CascSystem& system, const ImageBatch& x, double snr_db, uint64_t seed,
                    std::optional<int64_t> steps = {});

struct TrainOptions {
  std::function<void(const LossLogEntry&)> on_epoch;
  /// Perceptual network for the stage-1 objective; null disables the term.
  std::shared_ptr<eval::FeatureNet> perceptual_net;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossLogEntry> log;
  double final_loss = 0.0;  // objective of the final weights on the evaluation subset
};

/// Optimizes the semantic autoencoder alone.
TrainResult train_stage1(const data::Dataset& dataset, const CascConfig& cfg, const TrainConfig& tc,
                         const TrainOptions& options = {});

/// Freezes the autoencoder from `codec_ckpt` and optimizes the condition encoder,
/// the CAN (when enabled) and the U-Net on the denoising objective.
TrainResult train_stage2(const data::Dataset& dataset, const Checkpoint& codec_ckpt,
                         const CascConfig& cfg, const TrainConfig& tc,
                         const TrainOptions& options = {});

/// Stage-1 objective of `system` on the first `count` images (deterministic).
double evaluate_stage1_loss(CascSystem& system, const data::Dataset& dataset, int64_t count,
                            std::shared_ptr<eval::FeatureNet> perceptual_net);

/// Stage-2 objective with draws from a fixed evaluation seed (deterministic).
double evaluate_stage2_loss(CascSystem& system, const data::Dataset& dataset, int64_t count,
                            uint64_t seed, const std::vector<double>& snr_grid_db);

/// Mean reconstruction PSNR of encode -> decode on `dataset`.
double reconstruction_psnr(CascSystem& system, const data::Dataset& dataset, int64_t batch_size = 128);

}  // namespace casc::pipeline
