#pragma once

// Experiment configuration: an INI-style file with [codec], [channel], [can],
// [ldm], [train] and [eval] sections. Every key is optional.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/channel.hpp"
#include "casc/codec.hpp"
#include "casc/unet.hpp"

namespace casc {

struct ChannelSection {
  channel::Rational cr{1, 48};
  double snr_db = 10.0;
  uint64_t seed = 0;
};

struct LdmSection {
  int64_t steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int64_t base_channels = 64;
  std::vector<int64_t> channel_mult{1, 2, 2};
  int64_t attention_level = 1;
};

struct TrainSection {
  double stage1_lr = 4.5e-6;
  double stage2_lr = 1e-6;
  int64_t epochs = 500;
  int64_t batch_size = 32;
  uint64_t seed = 0;
  /// When unset, each batch draws its SNR uniformly from snr_grid_db.
  std::optional<double> snr_db;
  std::vector<double> snr_grid_db{5.0, 10.0, 15.0, 20.0};
  /// Images used to report the final loss of a run.
  int64_t eval_images = 64;
};

struct EvalSection {
  std::string asset_dir;  // empty: $CASC_ASSET_DIR
  bool allow_uncalibrated = false;
  std::string lpips_sha256;
  std::string fid_sha256;
  int64_t n_images = 256;
};

struct CascConfig {
  codec::CodecConfig codec;
  ChannelSection channel;
  bool can_enabled = true;
  LdmSection ldm;
  TrainSection train;
  EvalSection eval;

  /// L for the configured compression ratio on the codec's latent grid.
  int64_t condition_channels() const;
  /// U-Net configuration on the latent grid.
  ldm::UNetConfig unet_config() const;
  void validate() const;
};

/// Reads an INI file; missing keys keep their defaults. Unknown sections or keys
/// raise ConfigError.
CascConfig load_config(const std::filesystem::path& path);
CascConfig parse_config(const std::string& text);

nlohmann::json to_json(const CascConfig& cfg);
CascConfig config_from_json(const nlohmann::json& j);

}  // namespace casc
