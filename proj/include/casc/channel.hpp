#pragma once

// Condition-channel encoder, transmit power normalization, and the AWGN channel.

#include <cstdint>
#include <string>
#include <string_view>

#include <torch/torch.h>

#include "casc/tensors.hpp"

namespace casc::channel {

struct ChannelConfig {
  double snr_db = 10.0;  // kNoiselessSnrDb disables noise
  uint64_t seed = 0;
};

/// Per-entry noise variance under unit transmit power: 10^(-snr_db / 10).
double noise_variance(double snr_db);

/// Single 3x3 stride-1 convolution from the latent grid to L condition channels.
class ConditionEncoderImpl : public torch::nn::Module {
 public:
  ConditionEncoderImpl(int64_t c_lat, int64_t condition_channels);

  /// B x c_lat x h x w -> B x (L*h*w), flattened channel-major.
  ConditionSignal forward(const LatentCode& z);

  int64_t condition_channels() const { return condition_channels_; }
  torch::nn::Conv2d& conv() { return conv_; }

 private:
  int64_t condition_channels_;
  torch::nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(ConditionEncoder);

/// Applies `encoder` after checking L >= 1 and matching latent channels.
ConditionSignal condition_encode(ConditionEncoder& encoder, const LatentCode& z);

/// Scales each sample to unit mean-square entry. Throws DegenerateInputError on
/// an all-zero sample. Differentiable.
ConditionSignal power_normalize(const ConditionSignal& c);

/// C + n with n ~ N(0, sigma^2) i.i.d. per real entry. Sample b draws from a
/// stream seeded by mix_seed(cfg.seed, b), so results do not depend on batch
/// composition. Differentiable in `c`.
ConditionSignal awgn_transmit(const ConditionSignal& c, const ChannelConfig& cfg);

/// Exact nonnegative rational number in lowest terms.
struct Rational {
  int64_t num = 0;
  int64_t den = 1;

  static Rational make(int64_t num, int64_t den);
  /// Parses "a/b" or an integer.
  static Rational parse(std::string_view text);
  std::string str() const;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend bool operator==(const Rational&, const Rational&) = default;
};

/// d / (2 * n_source): real channel symbols per pair of source values.
Rational compression_ratio(int64_t d, int64_t n_source);

/// Condition channels L giving `cr` on an image of `image_size`^2 x 3 with a
/// `latent_size`^2 latent grid. Throws ConfigError if no integer L exists.
int64_t condition_channels_for(const Rational& cr, int64_t image_size, int64_t latent_size);

}  // namespace casc::channel
