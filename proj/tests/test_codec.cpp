#include <limits>

#include <gtest/gtest.h>

#include "casc/codec.hpp"
#include "casc/errors.hpp"

using namespace casc;

namespace {

codec::CodecConfig small_codec() {
  codec::CodecConfig cfg;
  cfg.base_channels = 8;
  cfg.codebook_size = 16;
  cfg.perceptual_weight = 0.0;
  return cfg;
}

// Brute-force nearest codeword for every spatial vector.
torch::Tensor nearest_oracle(const torch::Tensor& z, const torch::Tensor& codebook) {
  const auto b = z.size(0), c = z.size(1), h = z.size(2), w = z.size(3);
  auto zd = z.to(torch::kDouble), cb = codebook.to(torch::kDouble);
  auto out = torch::empty({b, h, w}, torch::kLong);
  for (int64_t n = 0; n < b; ++n)
    for (int64_t i = 0; i < h; ++i)
      for (int64_t j = 0; j < w; ++j) {
        double best = std::numeric_limits<double>::infinity();
        int64_t arg = -1;
        for (int64_t k = 0; k < codebook.size(0); ++k) {
          double d = 0;
          for (int64_t ch = 0; ch < c; ++ch) {
            const double diff = zd[n][ch][i][j].item<double>() - cb[k][ch].item<double>();
            d += diff * diff;
          }
          if (d < best) best = d, arg = k;
        }
        out[n][i][j] = arg;
      }
  return out;
}

}  // namespace

TEST(VectorQuantizer, MatchesBruteForceNearestNeighbour) {
  auto gen = make_generator(2);
  auto z = torch::randn({2, 4, 3, 5}, gen);
  auto codebook = torch::randn({12, 4}, gen);
  auto q = codec::vq_quantize(LatentCode(z), codebook);
  EXPECT_TRUE(torch::equal(q.indices, nearest_oracle(z, codebook)));
  auto expected = codebook.index_select(0, q.indices.flatten()).view({2, 3, 5, 4}).permute({0, 3, 1, 2});
  EXPECT_TRUE(torch::allclose(q.quantized.tensor(), expected, 1e-6, 1e-6));
}

TEST(VectorQuantizer, StraightThroughGradientIsIdentity) {
  auto z = torch::randn({2, 4, 3, 3}).requires_grad_(true);
  auto codebook = torch::randn({8, 4});
  auto q = codec::vq_quantize(LatentCode(z), codebook);
  auto g = torch::randn_like(z);
  (q.quantized.tensor() * g).sum().backward();
  EXPECT_TRUE(torch::allclose(z.grad(), g));
}

TEST(VectorQuantizer, CommitmentLossValue) {
  auto z = torch::randn({1, 4, 4, 4});
  auto codebook = torch::randn({6, 4});
  const double beta = 0.25;
  auto q = codec::vq_quantize(LatentCode(z), codebook, beta);
  const double mse = (q.quantized.tensor() - z).pow(2).mean().item<double>();
  EXPECT_NEAR(q.commitment_loss.item<double>(), (1.0 + beta) * mse, 1e-5);
}

TEST(VectorQuantizer, RejectsBadCodebooks) {
  LatentCode z(torch::randn({1, 4, 2, 2}));
  EXPECT_THROW(codec::vq_quantize(z, torch::empty({0, 4})), ConfigError);
  EXPECT_THROW(codec::vq_quantize(z, torch::randn({5, 3})), ConfigError);
}

TEST(SemanticAutoencoder, ShapesAndRange) {
  torch::manual_seed(0);
  codec::SemanticAutoencoder ae(small_codec());
  ImageBatch x(torch::rand({3, 3, 32, 32}) * 2 - 1);
  auto z = ae->encode(x);
  EXPECT_EQ(z.tensor().sizes(), (std::vector<int64_t>{3, 4, 8, 8}));
  auto y = ae->decode(z).tensor();
  EXPECT_EQ(y.sizes(), x.tensor().sizes());
  EXPECT_LE(y.abs().max().item<float>(), 1.0f);
  EXPECT_THROW(ae->encode(ImageBatch(torch::zeros({1, 3, 16, 16}))), ConfigError);
  EXPECT_THROW(ae->decode(LatentCode(torch::zeros({1, 3, 8, 8}))), ConfigError);
}

TEST(SemanticAutoencoder, ConfigValidation) {
  auto cfg = small_codec();
  cfg.channel_mult = {1, 2};
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = small_codec();
  cfg.image_size = 30;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(AutoencoderLoss, ErrorsAndComposition) {
  auto cfg = small_codec();
  auto x = torch::rand({2, 3, 32, 32});
  auto commit = torch::tensor(0.5);
  EXPECT_THROW(codec::autoencoder_loss(x, torch::rand({2, 3, 16, 16}), commit, cfg, nullptr), ArgumentError);
  cfg.use_adversarial_term = true;
  EXPECT_THROW(codec::autoencoder_loss(x, x, commit, cfg, nullptr), ConfigError);
  cfg.use_adversarial_term = false;
  auto y = torch::rand({2, 3, 32, 32});
  auto loss = codec::autoencoder_loss(x, y, commit, cfg, nullptr);
  EXPECT_NEAR(loss.reconstruction.item<double>(), (x - y).abs().mean().item<double>(), 1e-6);
  EXPECT_NEAR(loss.total.item<double>(), loss.reconstruction.item<double>() + 0.5 * cfg.vq_weight, 1e-6);
}

TEST(AutoencoderLoss, DiscriminatorPath) {
  auto cfg = small_codec();
  cfg.use_adversarial_term = true;
  codec::PatchDiscriminator disc(16);
  auto x = torch::rand({2, 3, 32, 32}) * 2 - 1;
  auto y = torch::rand({2, 3, 32, 32}) * 2 - 1;
  auto loss = codec::autoencoder_loss(x, y, torch::tensor(0.0), cfg, nullptr, &disc);
  EXPECT_TRUE(std::isfinite(loss.adversarial.item<double>()));
  auto d = codec::discriminator_hinge_loss(disc, x, y);
  EXPECT_GE(d.item<double>(), 0.0);
}

TEST(NormGroups, DividesChannels) {
  for (int64_t c : {1, 3, 8, 12, 64, 96, 128, 256}) {
    const auto g = codec::norm_groups(c);
    EXPECT_EQ(c % g, 0) << c;
  }
  EXPECT_EQ(codec::norm_groups(128), 32);
}
