#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "casc/errors.hpp"
#include "casc/pipeline.hpp"
#include "helpers.hpp"

using namespace casc;
using pipeline::CascSystem;

TEST(TrainConfig, StageDefaults) {
  CascConfig cfg;
  auto s1 = pipeline::TrainConfig::from(cfg, 1);
  auto s2 = pipeline::TrainConfig::from(cfg, 2);
  EXPECT_DOUBLE_EQ(s1.lr_initial, 4.5e-6);
  EXPECT_DOUBLE_EQ(s2.lr_initial, 1e-6);
  EXPECT_EQ(s1.epochs, 500);
  EXPECT_EQ(s2.snr_protocol(), "sampled-per-batch from {5,10,15,20} dB");
  EXPECT_THROW(pipeline::TrainConfig::from(cfg, 3), ConfigError);
}

TEST(Respace, PreservesRetainedAlphaBar) {
  auto base = ldm::make_schedule(100);
  auto full = pipeline::respace(base, 100);
  EXPECT_EQ(full.schedule.betas(), base.betas());
  auto r = pipeline::respace(base, 10);
  ASSERT_EQ(r.timesteps.size(), 10u);
  EXPECT_EQ(r.timesteps.front(), 1);
  EXPECT_EQ(r.timesteps.back(), 100);
  for (int64_t i = 1; i <= 10; ++i) {
    EXPECT_NEAR(r.schedule.alpha_bar(i), base.alpha_bar(r.timesteps[static_cast<size_t>(i - 1)]), 1e-12);
  }
  EXPECT_THROW(pipeline::respace(base, 0), ConfigError);
  EXPECT_THROW(pipeline::respace(base, 101), ConfigError);
}

TEST(CascSystem, TransmitShapeRangeAndDeterminism) {
  CascSystem system(test::tiny_config(), 0);
  ImageBatch x(test::tiny_dataset(3).images);
  auto a = system.transmit(x, kNoiselessSnrDb, 1);
  EXPECT_EQ(a.tensor().sizes(), x.tensor().sizes());
  EXPECT_TRUE(torch::isfinite(a.tensor()).all().item<bool>());
  EXPECT_LE(a.tensor().abs().max().item<float>(), 1.0f);
  auto b = system.transmit(x, kNoiselessSnrDb, 1);
  EXPECT_TRUE(torch::equal(a.tensor(), b.tensor()));
  auto r = system.transmit(x, 10.0, 1, 4);
  EXPECT_EQ(r.tensor().sizes(), x.tensor().sizes());
}

TEST(CascSystem, ConditionLengthMatchesCompressionRatio) {
  auto cfg = test::tiny_config();
  CascSystem s48(cfg, 0);
  EXPECT_EQ(s48.condition_length(), 128);
  cfg.channel.cr = channel::Rational::make(1, 96);
  CascSystem s96(cfg, 0);
  EXPECT_EQ(s96.condition_length(), 64);
  auto c = s96.received_condition(ImageBatch(test::tiny_dataset(2).images), 10.0, 0);
  EXPECT_EQ(c.length(), 64);
}

TEST(CascSystem, DisabledCanNeverGeneratesWeights) {
  CascSystem system(test::tiny_config(), 0);
  system.set_can_enabled(false);
  system.transmit(ImageBatch(test::tiny_dataset(2).images), 10.0, 0);
  EXPECT_EQ(system.can->calls(), 0u);
  system.set_can_enabled(true);
  system.transmit(ImageBatch(test::tiny_dataset(2).images), 10.0, 0);
  EXPECT_GT(system.can->calls(), 0u);

  auto cfg = test::tiny_config();
  cfg.can_enabled = false;
  CascSystem plain(cfg, 0);
  EXPECT_FALSE(plain.has_can());
  EXPECT_THROW(plain.set_can_enabled(true), ConfigError);
}

TEST(CascSystem, FullCheckpointRoundTripIsCanonical) {
  CascSystem system(test::tiny_config(), 5);
  system.latent_scale = 0.75;
  auto bytes = system.full_checkpoint().serialize();
  auto loaded = CascSystem::from_checkpoint(Checkpoint::deserialize(bytes));
  EXPECT_EQ(loaded.full_checkpoint().serialize(), bytes);
  EXPECT_EQ(loaded.latent_scale, 0.75);
  Checkpoint other;
  other.manifest = {{"format", "casc-checkpoint"}, {"system", "deepjscc-mse"}};
  EXPECT_THROW(CascSystem::from_checkpoint(other), ConfigError);
}

TEST(TrainStage1, LogCheckpointAndReproducibleLoss) {
  auto cfg = test::tiny_config();
  auto tc = pipeline::TrainConfig::from(cfg, 1);
  tc.epochs = 2;
  auto data = test::tiny_dataset(48);
  auto r1 = pipeline::train_stage1(data, cfg, tc);
  ASSERT_EQ(r1.log.size(), 2u);
  EXPECT_EQ(r1.log[1].epoch, 2);
  EXPECT_GE(r1.log[1].wall_seconds, r1.log[0].wall_seconds);

  auto loaded = CascSystem::from_checkpoint(Checkpoint::deserialize(r1.checkpoint.serialize()));
  EXPECT_NEAR(pipeline::evaluate_stage1_loss(loaded, data, tc.eval_images, nullptr), r1.final_loss, 1e-6);
  EXPECT_EQ(r1.checkpoint.manifest.at("final_loss").get<double>(), r1.final_loss);

  auto r2 = pipeline::train_stage1(data, cfg, tc);
  EXPECT_EQ(r1.final_loss, r2.final_loss);
  EXPECT_EQ(r1.checkpoint.serialize(), r2.checkpoint.serialize());
}

TEST(TrainStage1, Errors) {
  auto cfg = test::tiny_config();
  auto tc = pipeline::TrainConfig::from(cfg, 1);
  EXPECT_THROW(pipeline::train_stage1(test::tiny_dataset(8).slice(0, 0), cfg, tc), DataError);
  tc.stage = 2;
  EXPECT_THROW(pipeline::train_stage1(test::tiny_dataset(8), cfg, tc), ConfigError);
}

TEST(TrainStage2, FreezesCodecAndIsolatesGradients) {
  auto cfg = test::tiny_config();
  auto data = test::tiny_dataset(32);
  auto s1 = pipeline::train_stage1(data, cfg, pipeline::TrainConfig::from(cfg, 1));
  auto tc = pipeline::TrainConfig::from(cfg, 2);
  tc.epochs = 2;
  auto s2 = pipeline::train_stage2(data, s1.checkpoint, cfg, tc);
  ASSERT_EQ(s2.log.size(), 2u);
  EXPECT_TRUE(std::isfinite(s2.final_loss));
  for (const auto& [name, t] : s2.checkpoint.arrays) {
    if (name.rfind("codec.", 0) == 0) EXPECT_TRUE(torch::equal(t, s1.checkpoint.arrays.at(name))) << name;
  }
  EXPECT_EQ(s2.checkpoint.manifest.at("snr_protocol"), tc.snr_protocol());

  // One manual stage-2 step: no gradient reaches the codec.
  auto after = CascSystem::from_checkpoint(s2.checkpoint);
  for (auto& p : after.codec->parameters()) p.set_requires_grad(false);
  auto z0 = after.encode(ImageBatch(data.images.slice(0, 0, 4))).tensor() * after.latent_scale;
  auto c = channel::power_normalize(channel::condition_encode(after.cond_encoder, LatentCode(z0)));
  auto w = can::generate_weights(after.can, c);
  ldm::DenoiserContext ctx{&after.unet, c.tensor(), &w};
  auto gen = make_generator(0);
  ldm::denoiser_loss(ctx, z0, after.schedule, gen).backward();
  for (const auto& p : after.codec->parameters()) EXPECT_FALSE(p.grad().defined() && p.grad().abs().sum().item<double>() != 0.0);
  bool any_unet_grad = false;
  for (const auto& p : after.unet->parameters()) any_unet_grad |= p.grad().defined();
  EXPECT_TRUE(any_unet_grad);
}

TEST(TrainStage2, RequiresCodecCheckpoint) {
  auto cfg = test::tiny_config();
  EXPECT_THROW(pipeline::train_stage2(test::tiny_dataset(8), Checkpoint{}, cfg, pipeline::TrainConfig::from(cfg, 2)),
               ConfigError);
}

TEST(LossLog, CsvHeader) {
  auto dir = test::scratch_dir("losslog");
  pipeline::write_loss_log(dir / "log.csv", {{1, 0.5, 1e-3, 0.1}, {2, 0.25, 1e-3, 0.2}});
  std::ifstream in(dir / "log.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "epoch,loss,lr,wall_seconds");
  EXPECT_EQ(row.substr(0, 6), "1,0.5,");
}
