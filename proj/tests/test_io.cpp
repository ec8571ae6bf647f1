#include <fstream>

#include <gtest/gtest.h>

#include "casc/checkpoint.hpp"
#include "casc/cifar.hpp"
#include "casc/config.hpp"
#include "casc/errors.hpp"
#include "casc/hashing.hpp"
#include "helpers.hpp"

using namespace casc;
namespace fs = std::filesystem;

TEST(Checkpoint, CanonicalRoundTrip) {
  Checkpoint ckpt;
  ckpt.manifest = {{"b", 2}, {"a", "x"}};
  ckpt.arrays["w"] = torch::randn({3, 4});
  ckpt.arrays["d"] = torch::randn({2}, torch::kDouble);
  ckpt.arrays["i"] = torch::arange(5, torch::kLong);
  ckpt.arrays["u"] = torch::arange(4, torch::kUInt8);
  ckpt.arrays["s"] = torch::tensor(1.5f);
  auto bytes = ckpt.serialize();
  auto back = Checkpoint::deserialize(bytes);
  EXPECT_EQ(back.serialize(), bytes);
  EXPECT_EQ(back.manifest, ckpt.manifest);
  for (const auto& [k, v] : ckpt.arrays) EXPECT_TRUE(torch::equal(back.arrays.at(k), v)) << k;
}

TEST(Checkpoint, RejectsCorruptArchives) {
  Checkpoint ckpt;
  ckpt.arrays["w"] = torch::randn({3});
  auto bytes = ckpt.serialize();
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(Checkpoint::deserialize(bad), FormatError);
  auto cut = std::vector<uint8_t>(bytes.begin(), bytes.end() - 2);
  EXPECT_THROW(Checkpoint::deserialize(cut), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(Checkpoint::deserialize(extra), FormatError);
  EXPECT_THROW(Checkpoint::load("/nonexistent/ckpt.bin"), ConfigError);
}

TEST(Checkpoint, ModuleStoreRestore) {
  torch::nn::Linear a(4, 3), b(4, 3);
  Checkpoint ckpt;
  ckpt.store_module("lin", *a);
  EXPECT_TRUE(ckpt.has_prefix("lin"));
  EXPECT_FALSE(ckpt.has_prefix("li"));
  ckpt.restore_module("lin", *b);
  EXPECT_TRUE(torch::equal(a->weight, b->weight));
  torch::nn::Linear wrong(5, 3);
  EXPECT_THROW(ckpt.restore_module("lin", *wrong), ConfigError);
  EXPECT_THROW(ckpt.restore_module("other", *b), ConfigError);
}

TEST(Config, DefaultsFollowTrainingProtocol) {
  CascConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.train.stage1_lr, 4.5e-6);
  EXPECT_DOUBLE_EQ(cfg.train.stage2_lr, 1e-6);
  EXPECT_EQ(cfg.train.epochs, 500);
  EXPECT_EQ(cfg.ldm.steps, 1000);
  EXPECT_EQ(cfg.codec.base_channels, 128);
  EXPECT_EQ(cfg.codec.downsample_stages, 2);
  EXPECT_EQ(cfg.condition_channels(), 2);
  EXPECT_FALSE(cfg.train.snr_db.has_value());
}

TEST(Config, ParsesSectionsAndLists) {
  auto cfg = parse_config(
      "[codec]\nbase_channels = 32\nchannel_mult = 1,2,4\n"
      "[channel]\ncr = 1/96\n"
      "[can]\nenabled = false\n"
      "[ldm]\nsteps = 100\n"
      "[train]\nsnr_db = 15\nsnr_grid_db = 5,20\n"
      "[eval]\nallow_uncalibrated = true\n");
  EXPECT_EQ(cfg.codec.base_channels, 32);
  EXPECT_EQ(cfg.codec.channel_mult, (std::vector<int64_t>{1, 2, 4}));
  EXPECT_EQ(cfg.channel.cr, channel::Rational::make(1, 96));
  EXPECT_EQ(cfg.condition_channels(), 1);
  EXPECT_FALSE(cfg.can_enabled);
  EXPECT_EQ(cfg.ldm.steps, 100);
  EXPECT_EQ(cfg.train.snr_db, 15.0);
  EXPECT_EQ(cfg.train.snr_grid_db, (std::vector<double>{5, 20}));
  EXPECT_TRUE(cfg.eval.allow_uncalibrated);
  EXPECT_FALSE(parse_config("[train]\nsnr_db = sampled\n").train.snr_db.has_value());
}

TEST(Config, RejectsUnknownAndInvalid) {
  EXPECT_THROW(parse_config("[codec]\nwidth = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("[decoder]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[channel]\ncr = 1/100\n"), ConfigError);
  EXPECT_THROW(parse_config("[train]\nepochs = 0\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent.ini"), ConfigError);
}

TEST(Config, JsonRoundTrip) {
  auto cfg = test::tiny_config();
  cfg.train.snr_db = 12.5;
  cfg.channel.cr = channel::Rational::make(1, 96);
  EXPECT_EQ(to_json(config_from_json(to_json(cfg))), to_json(cfg));
}

TEST(Cifar, ByteMapEndpoints) {
  EXPECT_EQ(data::byte_to_unit(0), -1.0f);
  EXPECT_EQ(data::byte_to_unit(255), 1.0f);
  for (int b = 0; b < 256; ++b) EXPECT_EQ(data::unit_to_byte(data::byte_to_unit(static_cast<uint8_t>(b))), b);
  EXPECT_EQ(data::unit_to_byte(3.0f), 255);
  EXPECT_EQ(data::unit_to_byte(-3.0f), 0);
}

TEST(Cifar, RecordRoundTripIsByteExact) {
  auto dir = test::scratch_dir("cifar_roundtrip");
  auto ds = data::make_synthetic_dataset(50, 4);
  data::write_cifar_batch(dir / "data_batch_1.bin", ds);
  std::ifstream in(dir / "data_batch_1.bin", std::ios::binary);
  std::vector<uint8_t> raw((std::istreambuf_iterator<char>(in)), {});
  ASSERT_EQ(raw.size(), 50u * data::kRecordBytes);
  auto parsed = data::read_cifar_batch(dir / "data_batch_1.bin", std::nullopt);
  for (int64_t i = 0; i < parsed.size(); ++i) {
    auto rec = data::serialize_record(parsed, i);
    ASSERT_TRUE(std::equal(rec.begin(), rec.end(), raw.begin() + i * data::kRecordBytes)) << i;
  }
  // Channel-major planes: first pixel byte of the record is R(0,0).
  EXPECT_EQ(parsed.images[0][0][0][0].item<float>(), data::byte_to_unit(raw[1]));
  EXPECT_EQ(parsed.images[0][1][0][0].item<float>(), data::byte_to_unit(raw[1 + 1024]));
  EXPECT_EQ(parsed.labels[0], raw[0]);
  EXPECT_EQ(data::verify_round_trip(dir / "data_batch_1.bin"), 50);
}

TEST(Cifar, EveryByteValueSurvives) {
  auto dir = test::scratch_dir("cifar_bytes");
  std::vector<char> raw(2 * data::kRecordBytes);
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<char>(i % 256);
  std::ofstream(dir / "b.bin", std::ios::binary).write(raw.data(), static_cast<std::streamsize>(raw.size()));
  EXPECT_EQ(data::verify_round_trip(dir / "b.bin"), 2);
}

TEST(Cifar, SizeErrorsNameTheFile) {
  auto dir = test::scratch_dir("cifar_bad");
  data::write_cifar_batch(dir / "data_batch_1.bin", data::make_synthetic_dataset(3, 1));
  try {
    data::read_cifar_batch(dir / "data_batch_1.bin");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("data_batch_1.bin"), std::string::npos);
  }
  std::ofstream(dir / "test_batch.bin", std::ios::binary) << "short";
  EXPECT_THROW(data::load_cifar_format(dir), FormatError);
  EXPECT_THROW(data::ingest_cifar10(test::scratch_dir("cifar_empty")), DataError);
}

TEST(Cifar, SyntheticSplitLoads) {
  auto dir = test::scratch_dir("cifar_synth");
  data::write_synthetic_cifar(dir, 40, 10, 2, 2);
  auto split = data::load_cifar_format(dir);
  EXPECT_EQ(split.train.size(), 40);
  EXPECT_EQ(split.test.size(), 10);
  EXPECT_LE(split.train.images.abs().max().item<float>(), 1.0f);
  for (auto l : split.train.labels) EXPECT_LT(l, 10);
}

TEST(Hashing, KnownDigestAndTreeStability) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex({reinterpret_cast<const uint8_t*>(abc.data()), abc.size()}),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  auto dir = test::scratch_dir("tree");
  fs::create_directories(dir / "a");
  std::ofstream(dir / "a" / "x.txt") << "x";
  const auto h1 = tree_hash(dir, {"a"});
  EXPECT_EQ(h1, tree_hash(dir, {"a"}));
  std::ofstream(dir / "a" / "x.txt") << "y";
  EXPECT_NE(h1, tree_hash(dir, {"a"}));
  EXPECT_EQ(source_tree_hash().size(), 64u);
}
