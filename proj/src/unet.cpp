#include "casc/unet.hpp"

#include <cmath>

#include "casc/codec.hpp"

namespace casc::ldm {

namespace nn = torch::nn;
using can::LayerKind;
using can::ModulatedLayer;

void UNetConfig::validate() const {
  if (in_channels < 1 || condition_channels < 1 || base_channels < 1 || grid_size < 1 ||
      condition_grid < 1 || channel_mult.empty()) {
    throw ConfigError("unet: sizes must be positive");
  }
  const int64_t levels = static_cast<int64_t>(channel_mult.size());
  if (grid_size % (int64_t{1} << (levels - 1)) != 0) {
    throw ConfigError("unet: grid " + std::to_string(grid_size) + " cannot be halved " +
                      std::to_string(levels - 1) + " times");
  }
  if (grid_size % condition_grid != 0) {
    throw ConfigError("unet: condition grid must divide the denoising grid");
  }
  if (base_channels % 2 != 0) throw ConfigError("unet: base_channels must be even");
}

torch::Tensor timestep_embedding(const torch::Tensor& t, int64_t dim) {
  const int64_t half = dim / 2;
  auto freqs = torch::exp(-std::log(10000.0) *
                          torch::arange(half, torch::TensorOptions().dtype(torch::kDouble)) /
                          static_cast<double>(half));
  auto args = t.to(torch::kDouble).unsqueeze(1) * freqs.unsqueeze(0);
  auto emb = torch::cat({torch::sin(args), torch::cos(args)}, 1);
  if (dim % 2 == 1) emb = torch::nn::functional::pad(emb, nn::functional::PadFuncOptions({0, 1}));
  return emb;
}

namespace {

ModulatedLayer add_layer(nn::Module& owner, const std::string& name, const std::string& id,
                         LayerKind kind, int64_t c_in, int64_t c_out,
                         std::vector<ModulatedLayer>& registry) {
  auto layer = owner.register_module(name, ModulatedLayer(id, kind, c_in, c_out));
  registry.push_back(layer);
  return layer;
}

}  // namespace

UNetResBlockImpl::UNetResBlockImpl(const std::string& id, int64_t c_in, int64_t c_out,
                                   int64_t time_dim, std::vector<ModulatedLayer>& registry) {
  norm1_ = register_module("norm1", nn::GroupNorm(codec::norm_groups(c_in), c_in));
  conv1_ = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(c_in, c_out, 3).padding(1)));
  temb_proj_ = add_layer(*this, "temb_proj", id + ".temb_proj", LayerKind::FullyConnected,
                         time_dim, c_out, registry);
  norm2_ = register_module("norm2", nn::GroupNorm(codec::norm_groups(c_out), c_out));
  conv2_ = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(c_out, c_out, 3).padding(1)));
  if (c_in != c_out) {
    skip_ = add_layer(*this, "skip", id + ".skip", LayerKind::Conv1x1, c_in, c_out, registry);
  }
}

torch::Tensor UNetResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb,
                                        const can::DynamicWeightSet* w, can::DeliveryLog* log) {
  auto h = conv1_(torch::silu(norm1_(x)));
  h = h + temb_proj_(torch::silu(temb), w, log).unsqueeze(-1).unsqueeze(-1);
  h = conv2_(torch::silu(norm2_(h)));
  return (skip_ ? skip_(x, w, log) : x) + h;
}

UNetAttnBlockImpl::UNetAttnBlockImpl(const std::string& id, int64_t channels,
                                     std::vector<ModulatedLayer>& registry) {
  norm_ = register_module("norm", nn::GroupNorm(codec::norm_groups(channels), channels));
  q_ = add_layer(*this, "q", id + ".q", LayerKind::Conv1x1, channels, channels, registry);
  k_ = add_layer(*this, "k", id + ".k", LayerKind::Conv1x1, channels, channels, registry);
  v_ = add_layer(*this, "v", id + ".v", LayerKind::Conv1x1, channels, channels, registry);
  proj_ = add_layer(*this, "proj", id + ".proj", LayerKind::Conv1x1, channels, channels, registry);
}

torch::Tensor UNetAttnBlockImpl::forward(const torch::Tensor& x, const can::DynamicWeightSet* w,
                                         can::DeliveryLog* log) {
  const auto b = x.size(0), c = x.size(1), hw = x.size(2) * x.size(3);
  auto n = norm_(x);
  auto q = q_(n, w, log).reshape({b, c, hw}).transpose(1, 2);
  auto k = k_(n, w, log).reshape({b, c, hw});
  auto v = v_(n, w, log).reshape({b, c, hw});
  auto attn = torch::softmax(torch::bmm(q, k) / std::sqrt(static_cast<double>(c)), -1);
  auto out = torch::bmm(v, attn.transpose(1, 2)).reshape(x.sizes());
  return x + proj_(out, w, log);
}

UNetImpl::UNetImpl(UNetConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t base = cfg_.base_channels;
  const int64_t tdim = cfg_.time_dim();
  const auto levels = static_cast<int64_t>(cfg_.channel_mult.size());

  temb_fc1_ = add_layer(*this, "temb_fc1", "temb.fc1", LayerKind::FullyConnected, base, tdim,
                        modulated_);
  temb_fc2_ = add_layer(*this, "temb_fc2", "temb.fc2", LayerKind::FullyConnected, tdim, tdim,
                        modulated_);
  conv_in_ = register_module(
      "conv_in",
      nn::Conv2d(nn::Conv2dOptions(cfg_.in_channels + cfg_.condition_channels, base, 3).padding(1)));

  std::vector<int64_t> skip_channels;
  int64_t ch = base;
  for (int64_t i = 0; i < levels; ++i) {
    const int64_t out = base * cfg_.channel_mult[static_cast<size_t>(i)];
    const std::string id = "down" + std::to_string(i);
    down_res_.push_back(register_module(id + "_res", UNetResBlock(id + ".res", ch, out, tdim, modulated_)));
    ch = out;
    down_attn_.push_back(i == cfg_.attention_level
                             ? register_module(id + "_attn", UNetAttnBlock(id + ".attn", ch, modulated_))
                             : UNetAttnBlock{nullptr});
    skip_channels.push_back(ch);
    if (i + 1 < levels) {
      downsample_.push_back(register_module(
          id + "_downsample", nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).stride(2).padding(1))));
    }
  }
  mid1_ = register_module("mid1", UNetResBlock("mid1", ch, ch, tdim, modulated_));
  mid2_ = register_module("mid2", UNetResBlock("mid2", ch, ch, tdim, modulated_));
  for (int64_t i = levels - 1; i >= 0; --i) {
    const std::string id = "up" + std::to_string(i);
    if (i + 1 < levels) {
      upsample_.push_back(register_module(
          id + "_upsample", nn::Conv2d(nn::Conv2dOptions(ch, ch, 3).padding(1))));
    }
    const int64_t skip = skip_channels[static_cast<size_t>(i)];
    up_res_.push_back(
        register_module(id + "_res", UNetResBlock(id + ".res", ch + skip, skip, tdim, modulated_)));
    ch = skip;
  }
  norm_out_ = register_module("norm_out", nn::GroupNorm(codec::norm_groups(ch), ch));
  conv_out_ = register_module(
      "conv_out", nn::Conv2d(nn::Conv2dOptions(ch, cfg_.out_channels(), 3).padding(1)));
}

torch::Tensor UNetImpl::assemble_input(const torch::Tensor& z_t, const torch::Tensor& condition) const {
  if (z_t.dim() != 4 || z_t.size(1) != cfg_.in_channels || z_t.size(2) != cfg_.grid_size ||
      z_t.size(3) != cfg_.grid_size) {
    throw ConfigError("unet: input " + c10::str(z_t.sizes()) + " does not match the " +
                      std::to_string(cfg_.in_channels) + "x" + std::to_string(cfg_.grid_size) +
                      "x" + std::to_string(cfg_.grid_size) + " grid");
  }
  if (condition.dim() != 2 || condition.size(0) != z_t.size(0) ||
      condition.size(1) != cfg_.condition_length()) {
    throw ConfigError("unet: condition " + c10::str(condition.sizes()) + " cannot be reshaped to " +
                      std::to_string(cfg_.condition_channels) + "x" +
                      std::to_string(cfg_.condition_grid) + "x" + std::to_string(cfg_.condition_grid));
  }
  auto map = condition.view({condition.size(0), cfg_.condition_channels, cfg_.condition_grid,
                             cfg_.condition_grid});
  if (cfg_.condition_grid != cfg_.grid_size) {
    const int64_t factor = cfg_.grid_size / cfg_.condition_grid;
    map = map.repeat_interleave(factor, 2).repeat_interleave(factor, 3);
  }
  return torch::cat({z_t, map.to(z_t.dtype())}, 1);
}

torch::Tensor UNetImpl::forward(const torch::Tensor& z_t, const torch::Tensor& condition,
                                const torch::Tensor& t, const can::DynamicWeightSet* weights,
                                can::DeliveryLog* log) {
  auto x = assemble_input(z_t, condition);
  auto temb = timestep_embedding(t, cfg_.base_channels).to(z_t.dtype());
  temb = temb_fc2_(torch::silu(temb_fc1_(temb, weights, log)), weights, log);

  auto h = conv_in_(x);
  std::vector<torch::Tensor> skips;
  const auto levels = down_res_.size();
  for (size_t i = 0; i < levels; ++i) {
    h = down_res_[i](h, temb, weights, log);
    if (down_attn_[i]) h = down_attn_[i](h, weights, log);
    skips.push_back(h);
    if (i + 1 < levels) h = downsample_[i](h);
  }
  h = mid1_(h, temb, weights, log);
  h = mid2_(h, temb, weights, log);
  size_t up_index = 0;
  for (size_t j = 0; j < levels; ++j) {
    const size_t level = levels - 1 - j;
    if (j > 0) {
      h = h.repeat_interleave(2, 2).repeat_interleave(2, 3);
      h = upsample_[up_index++](h);
    }
    h = up_res_[j](torch::cat({h, skips[level]}, 1), temb, weights, log);
  }
  return conv_out_(torch::silu(norm_out_(h)));
}

std::vector<can::LayerGroupSpec> UNetImpl::layer_groups() const { return can::group_layers(modulated_); }

}  // namespace casc::ldm
