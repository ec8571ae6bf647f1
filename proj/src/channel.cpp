#include "casc/channel.hpp"

#include <charconv>
#include <cmath>
#include <numeric>

namespace casc::channel {

double noise_variance(double snr_db) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return std::pow(10.0, -snr_db / 10.0);
}

ConditionEncoderImpl::ConditionEncoderImpl(int64_t c_lat, int64_t condition_channels)
    : condition_channels_(condition_channels) {
  if (condition_channels < 1) {
    throw ConfigError("condition encoder: L must be >= 1, got " +
                      std::to_string(condition_channels));
  }
  conv_ = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(c_lat, condition_channels, 3).padding(1)));
}

ConditionSignal ConditionEncoderImpl::forward(const LatentCode& z) {
  auto y = conv_(z.tensor());
  return ConditionSignal(y.flatten(1));
}

ConditionSignal condition_encode(ConditionEncoder& encoder, const LatentCode& z) {
  const auto expected = encoder->conv()->options.in_channels();
  if (z.channels() != expected) {
    throw ConfigError("condition_encode: latent has " + std::to_string(z.channels()) +
                      " channels, encoder expects " + std::to_string(expected));
  }
  return encoder->forward(z);
}

ConditionSignal power_normalize(const ConditionSignal& c) {
  const auto& x = c.tensor();
  auto power = x.pow(2).mean(1, /*keepdim=*/true);
  if ((power == 0).any().item<bool>()) {
    throw DegenerateInputError("power_normalize: sample with all-zero entries");
  }
  return ConditionSignal(x / power.sqrt());
}

ConditionSignal awgn_transmit(const ConditionSignal& c, const ChannelConfig& cfg) {
  const double variance = noise_variance(cfg.snr_db);
  const auto& x = c.tensor();
  if (variance == 0.0) return ConditionSignal(x.clone());
  const double sigma = std::sqrt(variance);
  std::vector<torch::Tensor> noise;
  noise.reserve(static_cast<size_t>(x.size(0)));
  for (int64_t b = 0; b < x.size(0); ++b) {
    auto gen = make_generator(mix_seed(cfg.seed, static_cast<uint64_t>(b)));
    noise.push_back(torch::randn({x.size(1)}, gen, x.options().requires_grad(false)));
  }
  return ConditionSignal(x + sigma * torch::stack(noise));
}

Rational Rational::make(int64_t num, int64_t den) {
  if (den == 0) throw ArgumentError("Rational: zero denominator");
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const int64_t g = std::gcd(num, den);
  return g == 0 ? Rational{0, 1} : Rational{num / g, den / g};
}

Rational Rational::parse(std::string_view text) {
  auto parse_int = [&](std::string_view part) {
    int64_t v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc{} || ptr != part.data() + part.size()) {
      throw ArgumentError("cannot parse ratio '" + std::string(text) + "'");
    }
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return make(parse_int(text), 1);
  return make(parse_int(text.substr(0, slash)), parse_int(text.substr(slash + 1)));
}

std::string Rational::str() const {
  return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
}

Rational compression_ratio(int64_t d, int64_t n_source) {
  if (d < 1 || n_source < 1) throw ArgumentError("compression_ratio: d and n must be >= 1");
  return Rational::make(d, 2 * n_source);
}

int64_t condition_channels_for(const Rational& cr, int64_t image_size, int64_t latent_size) {
  // d = CR * 2n and d = L * h * w.
  const int64_t n_source = image_size * image_size * 3;
  const int64_t positions = latent_size * latent_size;
  const int64_t numerator = cr.num * 2 * n_source;
  if (numerator % (cr.den * positions) != 0 || numerator == 0) {
    throw ConfigError("compression ratio " + cr.str() + " does not give an integer number of " +
                      "condition channels on a " + std::to_string(latent_size) + "x" +
                      std::to_string(latent_size) + " latent grid");
  }
  return numerator / (cr.den * positions);
}

}  // namespace casc::channel
