#include "casc/deepjscc.hpp"

#include <chrono>

#include "casc/config.hpp"
#include "casc/errors.hpp"

namespace casc::baseline {

namespace nn = torch::nn;

std::string to_string(LossKind kind) { return kind == LossKind::Mse ? "mse" : "lpips"; }

LossKind loss_kind_from_string(std::string_view text) {
  if (text == "mse") return LossKind::Mse;
  if (text == "lpips") return LossKind::Lpips;
  throw ConfigError("unknown baseline loss '" + std::string(text) + "' (expected mse or lpips)");
}

std::string system_name(LossKind kind) { return "deepjscc-" + to_string(kind); }

int64_t DeepJsccConfig::symbols() const {
  const int64_t n = 3 * image_size * image_size;
  return 2 * n * cr.num / cr.den;
}

int64_t DeepJsccConfig::bottleneck_channels() const {
  const int64_t side = image_size / 4;
  return symbols() / (side * side);
}

void DeepJsccConfig::validate() const {
  if (!(cr == channel::Rational::make(1, 48) || cr == channel::Rational::make(1, 96))) {
    throw ConfigError("baseline supports cr 1/48 or 1/96, got " + cr.str());
  }
  if (image_size < 4 || image_size % 4 != 0) throw ConfigError("baseline image_size must be a multiple of 4");
  if (width < 1) throw ConfigError("baseline width must be positive");
  const int64_t side = image_size / 4;
  if ((2 * 3 * image_size * image_size * cr.num) % cr.den != 0 || symbols() % (side * side) != 0) {
    throw ConfigError("cr " + cr.str() + " does not give a whole number of bottleneck channels");
  }
}

namespace {

nn::Conv2d conv(int64_t in, int64_t out, int64_t stride) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, 5).stride(stride).padding(2));
}

nn::ConvTranspose2d deconv(int64_t in, int64_t out, int64_t stride) {
  return nn::ConvTranspose2d(
      nn::ConvTranspose2dOptions(in, out, 5).stride(stride).padding(2).output_padding(stride - 1));
}

}  // namespace

DeepJsccImpl::DeepJsccImpl(DeepJsccConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int64_t w = cfg_.width;
  const int64_t c = cfg_.bottleneck_channels();
  encoder_ = register_module(
      "encoder", nn::Sequential(conv(3, w, 2), nn::PReLU(), conv(w, w, 2), nn::PReLU(), conv(w, w, 1),
                                nn::PReLU(), conv(w, w, 1), nn::PReLU(), conv(w, c, 1)));
  decoder_ = register_module(
      "decoder", nn::Sequential(deconv(c, w, 1), nn::PReLU(), deconv(w, w, 1), nn::PReLU(), deconv(w, w, 1),
                                nn::PReLU(), deconv(w, w, 2), nn::PReLU(), deconv(w, 3, 2), nn::Tanh()));
}

ConditionSignal DeepJsccImpl::encode(const ImageBatch& x) {
  if (x.height() != cfg_.image_size || x.width() != cfg_.image_size) {
    throw ConfigError("baseline expects " + std::to_string(cfg_.image_size) + "x" +
                      std::to_string(cfg_.image_size) + " images");
  }
  auto y = encoder_->forward(x.tensor()).flatten(1);
  return channel::power_normalize(ConditionSignal(y));
}

torch::Tensor DeepJsccImpl::decode(const ConditionSignal& y) {
  const int64_t side = cfg_.image_size / 4;
  if (y.length() != cfg_.symbols()) throw ArgumentError("baseline received a signal of the wrong length");
  return decoder_->forward(y.tensor().view({y.batch(), cfg_.bottleneck_channels(), side, side}));
}

torch::Tensor DeepJsccImpl::forward(const ImageBatch& x, double snr_db, uint64_t seed) {
  return decode(channel::awgn_transmit(encode(x), {snr_db, seed}));
}

Checkpoint deepjscc_checkpoint(const DeepJscc& model, const nlohmann::json& extra) {
  const auto& cfg = model->config();
  Checkpoint ckpt;
  ckpt.manifest = {{"format", "casc-checkpoint"},
                   {"system", system_name(cfg.loss)},
                   {"stage", 0},
                   {"cr", cfg.cr.str()},
                   {"image_size", cfg.image_size},
                   {"width", cfg.width},
                   {"loss", to_string(cfg.loss)}};
  for (const auto& [k, v] : extra.items()) ckpt.manifest[k] = v;
  ckpt.store_module("deepjscc", *model);
  return ckpt;
}

DeepJscc deepjscc_from_checkpoint(const Checkpoint& ckpt) {
  const auto& m = ckpt.manifest;
  if (m.value("format", "") != "casc-checkpoint" || !ckpt.has_prefix("deepjscc")) {
    throw ConfigError("not a baseline checkpoint");
  }
  DeepJsccConfig cfg;
  cfg.cr = channel::Rational::parse(m.at("cr").get<std::string>());
  cfg.image_size = m.at("image_size").get<int64_t>();
  cfg.width = m.at("width").get<int64_t>();
  cfg.loss = loss_kind_from_string(m.at("loss").get<std::string>());
  DeepJscc model(cfg);
  ckpt.restore_module("deepjscc", *model);
  return model;
}

pipeline::TrainResult train_deepjscc(const data::Dataset& dataset, const DeepJsccConfig& cfg,
                                     const pipeline::TrainConfig& tc,
                                     std::shared_ptr<eval::FeatureNet> perceptual_net,
                                     const pipeline::TrainOptions& options) {
  if (dataset.size() == 0) throw DataError("training dataset is empty");
  if (cfg.loss == LossKind::Lpips && !perceptual_net) {
    throw ConfigError("the lpips baseline loss needs a perceptual network");
  }
  torch::manual_seed(tc.seed);
  DeepJscc model(cfg);
  std::optional<eval::Lpips> lpips;
  if (perceptual_net) lpips.emplace(perceptual_net);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(tc.lr_initial));

  auto loss_of = [&](const torch::Tensor& x, const torch::Tensor& x_hat) {
    if (cfg.loss == LossKind::Mse) return torch::mse_loss(x_hat, x);
    return lpips->distance(x, x_hat).mean();
  };

  const auto start = std::chrono::steady_clock::now();
  pipeline::TrainResult result;
  uint64_t step = 0;
  for (int64_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    auto gen = make_generator(mix_seed(tc.seed ^ 0x3ULL, static_cast<uint64_t>(epoch)));
    auto order = torch::randperm(dataset.size(), gen, torch::TensorOptions().dtype(torch::kLong));
    double sum = 0.0;
    for (int64_t i = 0; i < dataset.size(); i += tc.batch_size) {
      const int64_t end = std::min(dataset.size(), i + tc.batch_size);
      auto x = dataset.batch(order.slice(0, i, end));
      double snr = tc.snr_db_train.value_or(0.0);
      if (!tc.snr_db_train) {
        const auto k = static_cast<int64_t>(tc.snr_grid_db.size());
        snr = tc.snr_grid_db[static_cast<size_t>(
            torch::randint(0, k, {1}, gen, torch::TensorOptions().dtype(torch::kLong)).item<int64_t>())];
      }
      auto loss = loss_of(x.tensor(), model->forward(x, snr, mix_seed(tc.seed, step++)));
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum += loss.item<double>() * static_cast<double>(end - i);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    pipeline::LossLogEntry entry{epoch, sum / static_cast<double>(dataset.size()), tc.lr_initial, secs};
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);
  }
  result.final_loss = result.log.empty() ? 0.0 : result.log.back().loss;
  result.checkpoint = deepjscc_checkpoint(
      model, {{"epochs", tc.epochs}, {"seed", tc.seed}, {"lr_initial", tc.lr_initial},
              {"snr_protocol", tc.snr_protocol()}, {"final_loss", result.final_loss}});
  return result;
}

}  // namespace casc::baseline
