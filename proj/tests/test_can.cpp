#include <set>

#include <gtest/gtest.h>

#include "casc/can.hpp"
#include "casc/errors.hpp"
#include "casc/unet.hpp"

using namespace casc;
using can::LayerKind;

namespace {

ldm::UNetConfig small_unet() {
  ldm::UNetConfig cfg;
  cfg.base_channels = 8;
  return cfg;
}

// Per-sample reference: reshape w_b into a kernel and apply it to x_b alone.
torch::Tensor dynamic_oracle(LayerKind kind, int64_t c_in, int64_t c_out, const torch::Tensor& w,
                             const torch::Tensor& x) {
  std::vector<torch::Tensor> outs;
  for (int64_t b = 0; b < x.size(0); ++b) {
    if (kind == LayerKind::FullyConnected) {
      outs.push_back(torch::matmul(w[b].view({c_out, c_in}), x[b]));
    } else {
      const int64_t k = can::kernel_size(kind);
      auto kernel = w[b].view({c_out, c_in, k, k});
      outs.push_back(torch::conv2d(x[b].unsqueeze(0), kernel, {}, 1, k / 2).squeeze(0));
    }
  }
  return torch::stack(outs);
}

}  // namespace

TEST(LayerKind, NamesRoundTrip) {
  for (auto k : {LayerKind::FullyConnected, LayerKind::Conv3x3, LayerKind::Conv1x1}) {
    EXPECT_EQ(can::layer_kind_from_string(can::to_string(k)), k);
  }
  EXPECT_THROW(can::layer_kind_from_string("conv5x5"), ConfigError);
  EXPECT_EQ(can::group_id_for(LayerKind::Conv1x1, 128, 64), "conv1x1_128x64");
}

TEST(DynamicBranch, MatchesPerSampleOracle) {
  auto gen = make_generator(4);
  struct Case {
    LayerKind kind;
    std::vector<int64_t> x_shape;
  };
  for (const auto& c : {Case{LayerKind::FullyConnected, {3, 5}}, Case{LayerKind::Conv1x1, {3, 5, 6, 6}},
                        Case{LayerKind::Conv3x3, {3, 5, 6, 6}}}) {
    const int64_t k = can::kernel_size(c.kind);
    auto x = torch::randn(c.x_shape, gen);
    auto w = torch::randn({3, 7 * 5 * k * k}, gen);
    auto got = can::dynamic_branch(c.kind, 5, 7, w, x);
    EXPECT_TRUE(torch::allclose(got, dynamic_oracle(c.kind, 5, 7, w, x), 1e-4, 1e-5)) << can::to_string(c.kind);
  }
}

TEST(DynamicBranch, LinearInWeights) {
  auto gen = make_generator(5);
  for (auto kind : {LayerKind::FullyConnected, LayerKind::Conv1x1, LayerKind::Conv3x3}) {
    const int64_t k = can::kernel_size(kind);
    auto x = kind == LayerKind::FullyConnected ? torch::randn({2, 4}, gen) : torch::randn({2, 4, 5, 5}, gen);
    auto w1 = torch::randn({2, 6 * 4 * k * k}, gen);
    auto w2 = torch::randn({2, 6 * 4 * k * k}, gen);
    auto f = [&](const torch::Tensor& w) { return can::dynamic_branch(kind, 4, 6, w, x); };
    EXPECT_TRUE(torch::allclose(f(2.5 * w1), 2.5 * f(w1), 1e-5, 1e-5));
    EXPECT_TRUE(torch::allclose(f(w1 + w2), f(w1) + f(w2), 1e-5, 1e-5));
    EXPECT_TRUE(torch::equal(f(torch::zeros_like(w1)), torch::zeros_like(f(w1))));
  }
}

TEST(ModulatedLayer, ApplyDynamicChecksLength) {
  can::ModulatedLayer layer("l", LayerKind::Conv1x1, 4, 4);
  auto x = torch::randn({2, 4, 3, 3});
  EXPECT_THROW(can::apply_dynamic(layer, torch::zeros({2, 15}), x), ArgumentError);
  auto y = can::apply_dynamic(layer, torch::zeros({2, 16}), x);
  EXPECT_TRUE(torch::allclose(y, layer->forward_static(x)));
}

TEST(GroupLayers, IdenticalConfigsShareAGroup) {
  std::vector<can::ModulatedLayer> layers{
      can::ModulatedLayer("a", LayerKind::Conv1x1, 8, 8), can::ModulatedLayer("b", LayerKind::Conv1x1, 8, 8),
      can::ModulatedLayer("c", LayerKind::Conv1x1, 8, 16), can::ModulatedLayer("d", LayerKind::FullyConnected, 8, 8)};
  auto groups = can::group_layers(layers);
  ASSERT_EQ(groups.size(), 3u);
  EXPECT_EQ(groups[0].member_layers, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(groups[0].weight_count(), 64);
  EXPECT_EQ(groups[1].weight_count(), 128);
}

using Groups = std::vector<can::LayerGroupSpec>;

TEST(CanNetwork, ConstructionErrors) {
  can::LayerGroupSpec g{"conv1x1_4x4", LayerKind::Conv1x1, 4, 4, {"x"}};
  EXPECT_THROW(can::CanNetwork(16, Groups{}), ConfigError);
  EXPECT_THROW(can::CanNetwork(0, Groups{g}), ConfigError);
  EXPECT_THROW(can::CanNetwork(16, Groups{g, g}), ConfigError);
}

TEST(CanNetwork, ZeroInitShapesAndCallCounter) {
  can::LayerGroupSpec a{"conv1x1_4x4", LayerKind::Conv1x1, 4, 4, {"x"}};
  can::LayerGroupSpec b{"fc_4x8", LayerKind::FullyConnected, 4, 8, {"y"}};
  can::CanNetwork net(16, Groups{a, b});
  EXPECT_EQ(net->head_parameter_count(), 16 * 16 + 16 * 32);
  auto w = can::generate_weights(net, ConditionSignal(torch::randn({3, 16})));
  EXPECT_EQ(w.size(), 2u);
  EXPECT_EQ(w.batch(), 3);
  EXPECT_EQ(w.at("fc_4x8").sizes(), (std::vector<int64_t>{3, 32}));
  EXPECT_EQ(w.at("conv1x1_4x4").abs().max().item<float>(), 0.0f);
  EXPECT_THROW(w.at("missing"), ArgumentError);
  EXPECT_THROW(net->forward(ConditionSignal(torch::randn({3, 15}))), ArgumentError);
  EXPECT_EQ(net->calls(), 1u);
}

TEST(CanNetwork, HeadsAreLinearInCondition) {
  can::LayerGroupSpec a{"conv1x1_4x4", LayerKind::Conv1x1, 4, 4, {"x"}};
  can::CanNetwork net(16, Groups{a});
  torch::NoGradGuard g;
  net->head("conv1x1_4x4")->weight.normal_();
  auto c1 = torch::randn({2, 16}), c2 = torch::randn({2, 16});
  auto f = [&](const torch::Tensor& c) { return net->forward(ConditionSignal(c)).at("conv1x1_4x4"); };
  EXPECT_TRUE(torch::allclose(f(c1 + c2), f(c1) + f(c2), 1e-4, 1e-5));
}

TEST(UNetWithCan, FreshCanIsZeroEquivalent) {
  torch::manual_seed(1);
  auto cfg = small_unet();
  ldm::UNet unet(cfg);
  can::CanNetwork net(cfg.condition_length(), unet->layer_groups());
  auto z = torch::randn({4, 4, 8, 8});
  auto c = torch::randn({4, cfg.condition_length()});
  auto t = torch::randint(1, 1000, {4}, torch::kLong);
  auto w = can::generate_weights(net, ConditionSignal(c));
  auto with = unet->forward(z, c, t, &w);
  auto without = unet->forward(z, c, t, nullptr);
  EXPECT_LE((with - without).abs().max().item<float>(), 1e-5f);
}

TEST(UNetWithCan, EveryModulatedLayerReceivesItsGroupTensor) {
  auto cfg = small_unet();
  ldm::UNet unet(cfg);
  can::CanNetwork net(cfg.condition_length(), unet->layer_groups());
  auto c = torch::randn({2, cfg.condition_length()});
  auto w = can::generate_weights(net, ConditionSignal(c));
  can::DeliveryLog log;
  unet->forward(torch::randn({2, 4, 8, 8}), c, torch::tensor({3L, 7L}), &w, &log);

  std::set<std::string> layer_ids;
  for (const auto& layer : unet->modulated_layers()) layer_ids.insert(layer->layer_id());
  std::set<std::string> delivered;
  for (const auto& e : log.entries) {
    delivered.insert(e.layer_id);
    EXPECT_EQ(e.storage, w.at(e.group_id).data_ptr()) << e.layer_id;
  }
  EXPECT_EQ(delivered, layer_ids);
  size_t members = 0;
  for (const auto& g : unet->layer_groups()) members += g.member_layers.size();
  EXPECT_EQ(members, layer_ids.size());
}

TEST(UNetWithCan, NonzeroHeadsChangeTheOutput) {
  torch::manual_seed(2);
  auto cfg = small_unet();
  ldm::UNet unet(cfg);
  can::CanNetwork net(cfg.condition_length(), unet->layer_groups());
  {
    torch::NoGradGuard g;
    for (auto& p : net->parameters()) p.normal_(0.0, 0.05);
  }
  auto z = torch::randn({2, 4, 8, 8});
  auto c = torch::randn({2, cfg.condition_length()});
  auto t = torch::tensor({10L, 500L});
  auto w = can::generate_weights(net, ConditionSignal(c));
  EXPECT_GT((unet->forward(z, c, t, &w) - unet->forward(z, c, t)).abs().max().item<float>(), 1e-4f);
}
