#include "casc/codec.hpp"

#include <string>

namespace casc::codec {

namespace nn = torch::nn;

void CodecConfig::validate() const {
  if (image_size < 1 || base_channels < 1 || downsample_stages < 1 || c_lat < 1 ||
      codebook_size < 1 || num_res_blocks < 1) {
    throw ConfigError("codec: sizes must be positive");
  }
  if (static_cast<int64_t>(channel_mult.size()) != downsample_stages + 1) {
    throw ConfigError("codec: channel_mult needs downsample_stages + 1 entries, got " +
                      std::to_string(channel_mult.size()));
  }
  if (image_size % (int64_t{1} << downsample_stages) != 0) {
    throw ConfigError("codec: image_size " + std::to_string(image_size) +
                      " is not divisible by 2^" + std::to_string(downsample_stages));
  }
}

int64_t norm_groups(int64_t channels) {
  for (int64_t g : {32, 16, 8, 4, 2}) {
    if (channels % g == 0) return g;
  }
  return 1;
}

ResBlockImpl::ResBlockImpl(int64_t in_channels, int64_t out_channels) {
  norm1_ = register_module("norm1", nn::GroupNorm(norm_groups(in_channels), in_channels));
  conv1_ = register_module(
      "conv1", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
  norm2_ = register_module("norm2", nn::GroupNorm(norm_groups(out_channels), out_channels));
  conv2_ = register_module(
      "conv2", nn::Conv2d(nn::Conv2dOptions(out_channels, out_channels, 3).padding(1)));
  if (in_channels != out_channels) {
    skip_ = register_module("skip", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
  }
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x) {
  auto h = conv1_(torch::silu(norm1_(x)));
  h = conv2_(torch::silu(norm2_(h)));
  return (skip_ ? skip_(x) : x) + h;
}

AttnBlockImpl::AttnBlockImpl(int64_t channels) {
  norm_ = register_module("norm", nn::GroupNorm(norm_groups(channels), channels));
  q_ = register_module("q", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
  k_ = register_module("k", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
  v_ = register_module("v", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
  proj_ = register_module("proj", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor AttnBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto n = norm_(x);
  auto q = q_(n).reshape({b, c, h * w}).transpose(1, 2);  // B x HW x C
  auto k = k_(n).reshape({b, c, h * w});                  // B x C x HW
  auto v = v_(n).reshape({b, c, h * w});
  auto attn = torch::softmax(torch::bmm(q, k) / std::sqrt(static_cast<double>(c)), -1);
  auto out = torch::bmm(v, attn.transpose(1, 2)).reshape({b, c, h, w});
  return x + proj_(out);
}

EncoderImpl::EncoderImpl(const CodecConfig& cfg) {
  int64_t ch = cfg.base_channels;
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(3, ch, 3).padding(1)));
  for (int64_t level = 0; level <= cfg.downsample_stages; ++level) {
    const int64_t out = cfg.base_channels * cfg.channel_mult[level];
    for (int64_t i = 0; i < cfg.num_res_blocks; ++i) {
      body_->push_back(ResBlock(ch, out));
      ch = out;
    }
    if (level < cfg.downsample_stages) {
      body_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1)));
    }
  }
  body_->push_back(ResBlock(ch, ch));
  body_->push_back(AttnBlock(ch));
  body_->push_back(ResBlock(ch, ch));
  body_->push_back(nn::GroupNorm(norm_groups(ch), ch));
  body_->push_back(nn::Functional(torch::silu));
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, cfg.c_lat, 3).padding(1)));
  register_module("body", body_);
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

namespace {

class UpsampleImpl : public nn::Module {
 public:
  explicit UpsampleImpl(int64_t channels) {
    conv_ = register_module("conv", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1)));
  }
  torch::Tensor forward(const torch::Tensor& x) {
    auto up = nn::functional::interpolate(
        x, nn::functional::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0})
               .mode(torch::kNearest));
    return conv_(up);
  }

 private:
  nn::Conv2d conv_{nullptr};
};
TORCH_MODULE(Upsample);

}  // namespace

DecoderImpl::DecoderImpl(const CodecConfig& cfg) {
  int64_t ch = cfg.base_channels * cfg.channel_mult.back();
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(cfg.c_lat, ch, 3).padding(1)));
  body_->push_back(ResBlock(ch, ch));
  body_->push_back(AttnBlock(ch));
  body_->push_back(ResBlock(ch, ch));
  for (int64_t level = cfg.downsample_stages; level >= 0; --level) {
    const int64_t out = cfg.base_channels * cfg.channel_mult[level];
    for (int64_t i = 0; i < cfg.num_res_blocks; ++i) {
      body_->push_back(ResBlock(ch, out));
      ch = out;
    }
    if (level > 0) body_->push_back(Upsample(ch));
  }
  body_->push_back(nn::GroupNorm(norm_groups(ch), ch));
  body_->push_back(nn::Functional(torch::silu));
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(ch, 3, 3).padding(1)));
  body_->push_back(nn::Functional(torch::tanh));
  register_module("body", body_);
}

torch::Tensor DecoderImpl::forward(const torch::Tensor& z) { return body_->forward(z); }

QuantizeResult vq_quantize(const LatentCode& z, const torch::Tensor& codebook, double beta) {
  if (codebook.dim() != 2 || codebook.size(0) < 1) {
    throw ConfigError("vq_quantize: codebook must be K x c_lat with K >= 1");
  }
  const auto& zt = z.tensor();
  if (codebook.size(1) != zt.size(1)) {
    throw ConfigError("vq_quantize: codebook dim " + std::to_string(codebook.size(1)) +
                      " != latent channels " + std::to_string(zt.size(1)));
  }
  const auto b = zt.size(0), c = zt.size(1), h = zt.size(2), w = zt.size(3);
  auto flat = zt.permute({0, 2, 3, 1}).reshape({-1, c});
  torch::Tensor indices;
  {
    torch::NoGradGuard no_grad;
    // ||z||^2 - 2 z.e + ||e||^2; the first term does not change the argmin.
    auto dist = codebook.pow(2).sum(1).unsqueeze(0) - 2.0 * torch::matmul(flat, codebook.t());
    indices = dist.argmin(1);
  }
  auto zq_flat = codebook.index_select(0, indices);
  auto zq = zq_flat.reshape({b, h, w, c}).permute({0, 3, 1, 2});

  auto codebook_term = torch::mean((zq - zt.detach()).pow(2));
  auto commit_term = torch::mean((zt - zq.detach()).pow(2));
  auto loss = codebook_term + beta * commit_term;

  auto straight_through = zt + (zq - zt).detach();
  return {LatentCode(straight_through), loss, indices.reshape({b, h, w})};
}

SemanticAutoencoderImpl::SemanticAutoencoderImpl(CodecConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  encoder_ = register_module("encoder", Encoder(cfg_));
  decoder_ = register_module("decoder", Decoder(cfg_));
  const double bound = 1.0 / static_cast<double>(cfg_.codebook_size);
  codebook_ = register_parameter(
      "codebook", torch::empty({cfg_.codebook_size, cfg_.c_lat}).uniform_(-bound, bound));
}

void SemanticAutoencoderImpl::check_image(const torch::Tensor& x) const {
  if (x.size(2) != cfg_.image_size || x.size(3) != cfg_.image_size) {
    throw ConfigError("codec: expected " + std::to_string(cfg_.image_size) + "x" +
                      std::to_string(cfg_.image_size) + " images, got " + c10::str(x.sizes()));
  }
}

void SemanticAutoencoderImpl::check_latent(const torch::Tensor& z) const {
  const int64_t s = cfg_.latent_size();
  if (z.size(1) != cfg_.c_lat || z.size(2) != s || z.size(3) != s) {
    throw ConfigError("codec: expected latent " + std::to_string(cfg_.c_lat) + "x" +
                      std::to_string(s) + "x" + std::to_string(s) + ", got " +
                      c10::str(z.sizes()));
  }
}

LatentCode SemanticAutoencoderImpl::encode(const ImageBatch& x) {
  check_image(x.tensor());
  return LatentCode(encoder_(x.tensor()));
}

std::pair<torch::Tensor, QuantizeResult> SemanticAutoencoderImpl::decode_with_vq(
    const LatentCode& z) {
  check_latent(z.tensor());
  auto q = vq_quantize(z, codebook_, cfg_.vq_beta);
  auto x = decoder_(q.quantized.tensor());
  return {x, std::move(q)};
}

ImageBatch SemanticAutoencoderImpl::decode(const LatentCode& z) {
  return ImageBatch(decode_with_vq(z).first);
}

torch::Tensor SemanticAutoencoderImpl::decode_quantized(const torch::Tensor& z_q) {
  check_latent(z_q);
  return decoder_(z_q);
}

void SemanticAutoencoderImpl::set_codebook(const torch::Tensor& values) {
  if (!values.sizes().equals(codebook_.sizes())) {
    throw ConfigError("codec: codebook shape mismatch " + c10::str(values.sizes()));
  }
  torch::NoGradGuard no_grad;
  codebook_.copy_(values);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(int64_t width) {
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(3, width, 4).stride(2).padding(1)));
  body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(width, width * 2, 4).stride(2).padding(1)));
  body_->push_back(nn::GroupNorm(norm_groups(width * 2), width * 2));
  body_->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  body_->push_back(nn::Conv2d(nn::Conv2dOptions(width * 2, 1, 3).padding(1)));
  register_module("body", body_);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return body_->forward(x); }

AutoencoderLoss autoencoder_loss(const torch::Tensor& x, const torch::Tensor& x_hat,
                                 const torch::Tensor& commitment_loss, const CodecConfig& cfg,
                                 const eval::Lpips* perceptual,
                                 PatchDiscriminator* discriminator) {
  if (!x.sizes().equals(x_hat.sizes())) {
    throw ArgumentError("autoencoder_loss: shape mismatch " + c10::str(x.sizes()) + " vs " +
                        c10::str(x_hat.sizes()));
  }
  AutoencoderLoss out;
  out.reconstruction = torch::mean(torch::abs(x - x_hat));
  auto zero = torch::zeros({}, x.options());
  out.perceptual = perceptual ? perceptual->distance(x, x_hat).mean() : zero;
  out.vq = cfg.vq_weight * commitment_loss;
  out.adversarial = zero;
  if (cfg.use_adversarial_term) {
    if (!discriminator) throw ConfigError("autoencoder_loss: adversarial term needs a discriminator");
    out.adversarial = -torch::mean((*discriminator)(x_hat));
  }
  out.total = out.reconstruction + cfg.perceptual_weight * out.perceptual + out.vq +
              cfg.adversarial_weight * out.adversarial;
  return out;
}

torch::Tensor discriminator_hinge_loss(PatchDiscriminator& disc, const torch::Tensor& real,
                                       const torch::Tensor& fake) {
  auto real_term = torch::relu(1.0 - disc(real)).mean();
  auto fake_term = torch::relu(1.0 + disc(fake.detach())).mean();
  return 0.5 * (real_term + fake_term);
}

}  // namespace casc::codec
