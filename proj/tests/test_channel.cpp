#include <cmath>

#include <gtest/gtest.h>

#include "casc/channel.hpp"
#include "casc/errors.hpp"

using namespace casc;
using channel::Rational;

TEST(Rational, ReducesAndParses) {
  EXPECT_EQ(Rational::make(128, 6144), Rational::make(1, 48));
  EXPECT_EQ(Rational::parse("1/96"), Rational::make(1, 96));
  EXPECT_EQ(Rational::parse("2/4"), Rational::make(1, 2));
  EXPECT_EQ(Rational::make(1, 48).str(), "1/48");
  EXPECT_THROW(Rational::parse("1/0"), Error);
  EXPECT_THROW(Rational::parse("abc"), ArgumentError);
}

TEST(CompressionRatio, MatchesSymbolCounts) {
  EXPECT_EQ(channel::compression_ratio(128, 3072), Rational::make(1, 48));
  EXPECT_EQ(channel::compression_ratio(64, 3072), Rational::make(1, 96));
  EXPECT_EQ(channel::condition_channels_for(Rational::make(1, 48), 32, 8), 2);
  EXPECT_EQ(channel::condition_channels_for(Rational::make(1, 96), 32, 8), 1);
  EXPECT_THROW(channel::condition_channels_for(Rational::make(1, 100), 32, 8), ConfigError);
}

TEST(ConditionEncoder, OutputLengthIsLTimesGrid) {
  for (int64_t l : {1, 2}) {
    channel::ConditionEncoder enc(4, l);
    auto c = channel::condition_encode(enc, LatentCode(torch::randn({3, 4, 8, 8})));
    EXPECT_EQ(c.batch(), 3);
    EXPECT_EQ(c.length(), l * 64);
    EXPECT_EQ(channel::compression_ratio(c.length(), 3 * 32 * 32), l == 2 ? Rational::make(1, 48) : Rational::make(1, 96));
  }
  EXPECT_THROW(channel::ConditionEncoder(4, 0), ConfigError);
  channel::ConditionEncoder enc(4, 2);
  EXPECT_THROW(channel::condition_encode(enc, LatentCode(torch::randn({1, 3, 8, 8}))), ConfigError);
}

TEST(NoiseVariance, FollowsDecibelDefinition) {
  EXPECT_DOUBLE_EQ(channel::noise_variance(10.0), 0.1);
  EXPECT_NEAR(channel::noise_variance(5.0), std::pow(10.0, -0.5), 1e-15);
  EXPECT_EQ(channel::noise_variance(kNoiselessSnrDb), 0.0);
}

TEST(PowerNormalize, UnitMeanSquarePerSampleAndScaleInvariant) {
  auto gen = make_generator(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = torch::randn({4, 37}, gen) * (trial + 1);
    auto y = channel::power_normalize(ConditionSignal(x)).tensor();
    auto ms = y.pow(2).mean(1);
    EXPECT_TRUE(torch::allclose(ms, torch::ones_like(ms), 1e-5, 1e-6));
    auto scaled = channel::power_normalize(ConditionSignal(x * 3.7)).tensor();
    EXPECT_TRUE(torch::allclose(scaled, y, 1e-5, 1e-6));
  }
  auto z = torch::randn({2, 8});
  z[1].zero_();
  EXPECT_THROW(channel::power_normalize(ConditionSignal(z)), DegenerateInputError);
}

TEST(Awgn, EmpiricalNoiseVarianceMatches) {
  const int64_t n = 100000;
  ConditionSignal c(torch::ones({1, n}));
  for (double snr : {0.0, 5.0, 20.0}) {
    auto y = channel::awgn_transmit(c, {snr, 7}).tensor();
    const double var = (y - 1.0).to(torch::kDouble).pow(2).mean().item<double>();
    EXPECT_NEAR(var / channel::noise_variance(snr), 1.0, 0.02) << snr;
  }
}

TEST(Awgn, DeterministicPerSeedAndPerSample) {
  ConditionSignal c(torch::randn({3, 16}));
  auto a = channel::awgn_transmit(c, {10.0, 5}).tensor();
  auto b = channel::awgn_transmit(c, {10.0, 5}).tensor();
  auto other = channel::awgn_transmit(c, {10.0, 6}).tensor();
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_FALSE(torch::equal(a, other));
  // Noise of sample b depends only on (seed, b), not on the rest of the batch.
  auto first = channel::awgn_transmit(ConditionSignal(c.tensor().slice(0, 0, 1)), {10.0, 5}).tensor();
  EXPECT_TRUE(torch::equal(first, a.slice(0, 0, 1)));
}

TEST(Awgn, NoiselessSentinelPassesThrough) {
  ConditionSignal c(torch::randn({2, 8}));
  auto y = channel::awgn_transmit(c, {kNoiselessSnrDb, 1}).tensor();
  EXPECT_TRUE(torch::equal(y, c.tensor()));
  EXPECT_NE(y.data_ptr(), c.tensor().data_ptr());
}
