#include "casc/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace casc::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr uint64_t kSamplerStream = 0x5A3D1E0FULL;
constexpr uint64_t kEvalStream = 0xE7A1ULL;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

json groups_to_json(const std::vector<can::LayerGroupSpec>& groups) {
  json out = json::array();
  for (const auto& g : groups) {
    out.push_back({{"group_id", g.group_id},
                   {"kind", can::to_string(g.kind)},
                   {"c_in", g.c_in},
                   {"c_out", g.c_out},
                   {"d_n", g.weight_count()},
                   {"members", g.member_layers}});
  }
  return out;
}

/// Images [begin, end) of the permutation, as one batch.
ImageBatch batch_of(const data::Dataset& dataset, const torch::Tensor& order, int64_t begin, int64_t end) {
  return dataset.batch(order.slice(0, begin, end));
}

double draw_snr(const TrainConfig& tc, at::Generator& gen) {
  if (tc.snr_db_train) return *tc.snr_db_train;
  const auto n = static_cast<int64_t>(tc.snr_grid_db.size());
  const auto idx = torch::randint(0, n, {1}, gen, torch::TensorOptions().dtype(torch::kLong)).item<int64_t>();
  return tc.snr_grid_db[static_cast<size_t>(idx)];
}

void check_dataset(const data::Dataset& dataset) {
  if (dataset.size() == 0) throw DataError("training dataset is empty");
}

}  // namespace

TrainConfig TrainConfig::from(const CascConfig& cfg, int stage) {
  if (stage != 1 && stage != 2) throw ConfigError("training stage must be 1 or 2");
  TrainConfig tc;
  tc.stage = stage;
  tc.epochs = cfg.train.epochs;
  tc.lr_initial = stage == 1 ? cfg.train.stage1_lr : cfg.train.stage2_lr;
  tc.batch_size = cfg.train.batch_size;
  tc.seed = cfg.train.seed;
  tc.snr_db_train = cfg.train.snr_db;
  tc.snr_grid_db = cfg.train.snr_grid_db;
  tc.eval_images = cfg.train.eval_images;
  return tc;
}


std::string TrainConfig::snr_protocol() const {
  if (snr_db_train) {
    std::ostringstream s;
    s << "fixed " << *snr_db_train << " dB";
    return s.str();
  }
  std::ostringstream s;
  s << "sampled-per-batch from {";
  for (size_t i = 0; i < snr_grid_db.size(); ++i) s << (i ? "," : "") << snr_grid_db[i];
  s << "} dB";
  return s.str();
}

void write_loss_log(const fs::path& path, const std::vector<LossLogEntry>& log) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,loss,lr,wall_seconds\n" << std::setprecision(10);
  for (const auto& e : log) out << e.epoch << ',' << e.loss << ',' << e.lr << ',' << e.wall_seconds << '\n';
}

RespacedSchedule respace(const ldm::NoiseSchedule& base, int64_t steps) {
  const int64_t total = base.steps();
  if (steps < 1 || steps > total) {
    throw ConfigError("sampler steps must be in [1, " + std::to_string(total) + "]");
  }
  RespacedSchedule out;
  if (steps == total) {
    out.schedule = base;
    for (int64_t t = 1; t <= total; ++t) out.timesteps.push_back(t);
    return out;
  }
  for (int64_t i = 0; i < steps; ++i) {
    const double pos = steps == 1 ? static_cast<double>(total - 1)
                                  : static_cast<double>(i) * static_cast<double>(total - 1) /
                                        static_cast<double>(steps - 1);
    out.timesteps.push_back(1 + std::llround(pos));
  }
  std::vector<double> betas;
  double prev = 1.0;
  for (int64_t t : out.timesteps) {
    const double ab = base.alpha_bar(t);
    betas.push_back(1.0 - ab / prev);
    prev = ab;
  }
  out.schedule = ldm::NoiseSchedule(std::move(betas));
  return out;
}

CascSystem::CascSystem(CascConfig cfg, uint64_t init_seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  torch::manual_seed(init_seed);
  codec = codec::SemanticAutoencoder(cfg_.codec);
  const auto unet_cfg = cfg_.unet_config();
  cond_encoder = channel::ConditionEncoder(cfg_.codec.c_lat, unet_cfg.condition_channels);
  unet = ldm::UNet(unet_cfg);
  if (cfg_.can_enabled) {
    can = can::CanNetwork(unet_cfg.condition_length(), unet->layer_groups());
    can_active_ = true;
  }
  schedule = ldm::make_schedule(cfg_.ldm.steps, cfg_.ldm.beta_start, cfg_.ldm.beta_end);
}

void CascSystem::set_can_enabled(bool enabled) {
  if (enabled && !can) throw ConfigError("this system was built without a CAN");
  can_active_ = enabled;
}

json CascSystem::base_manifest(int stage) const {
  json m;
  m["format"] = "casc-checkpoint";
  m["system"] = "casc";
  m["stage"] = stage;
  m["config"] = to_json(cfg_);
  m["latent_scale"] = latent_scale;
  m["can_enabled"] = static_cast<bool>(can);
  m["can_groups"] = can ? groups_to_json(can->groups()) : json::array();
  for (const auto& [k, v] : manifest_extra.items()) m[k] = v;
  return m;
}

Checkpoint CascSystem::codec_checkpoint(const json& extra) const {
  Checkpoint ckpt;
  ckpt.manifest = base_manifest(1);
  for (const auto& [k, v] : extra.items()) ckpt.manifest[k] = v;
  ckpt.store_module("codec", *codec);
  return ckpt;
}

Checkpoint CascSystem::full_checkpoint(const json& extra) const {
  Checkpoint ckpt;
  ckpt.manifest = base_manifest(2);
  for (const auto& [k, v] : extra.items()) ckpt.manifest[k] = v;
  ckpt.store_module("codec", *codec);
  ckpt.store_module("cond_encoder", *cond_encoder);
  ckpt.store_module("unet", *unet);
  if (can) ckpt.store_module("can", *can);
  return ckpt;
}

CascSystem CascSystem::from_checkpoint(const Checkpoint& ckpt) {
  const auto& m = ckpt.manifest;
  if (m.value("format", "") != "casc-checkpoint" || m.value("system", "") != "casc") {
    throw ConfigError("not a CASC checkpoint");
  }
  auto cfg = config_from_json(m.at("config"));
  cfg.can_enabled = m.at("can_enabled").get<bool>();
  CascSystem system(cfg, 0);
  ckpt.restore_module("codec", *system.codec);
  if (m.at("stage").get<int>() >= 2) {
    ckpt.restore_module("cond_encoder", *system.cond_encoder);
    ckpt.restore_module("unet", *system.unet);
    if (system.can) {
      if (groups_to_json(system.can->groups()) != m.at("can_groups")) {
        throw ConfigError("checkpoint CAN groups do not match the U-Net layout");
      }
      ckpt.restore_module("can", *system.can);
    }
  }
  system.latent_scale = m.at("latent_scale").get<double>();
  for (const auto& [k, v] : m.items()) {
    static const std::set<std::string> kBase{"format", "system", "stage", "config", "latent_scale",
                                             "can_enabled", "can_groups"};
    if (!kBase.count(k)) system.manifest_extra[k] = v;
  }
  return system;
}

LatentCode CascSystem::encode(const ImageBatch& x) {
  torch::NoGradGuard no_grad;
  return codec->encode(x);
}

ConditionSignal CascSystem::received_condition(const ImageBatch& x, double snr_db, uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto z = LatentCode(codec->encode(x).tensor() * latent_scale);
  auto c = channel::power_normalize(channel::condition_encode(cond_encoder, z));
  return channel::awgn_transmit(c, {snr_db, seed});
}

LatentCode CascSystem::denoise(const ConditionSignal& c_hat, uint64_t seed, std::optional<int64_t> steps) {
  torch::NoGradGuard no_grad;
  std::optional<can::DynamicWeightSet> weights;
  if (can_active_) weights = can::generate_weights(can, c_hat);
  ldm::DenoiserContext ctx{&unet, c_hat.tensor(), weights ? &*weights : nullptr};
  auto gen = make_generator(mix_seed(seed, kSamplerStream));
  const int64_t side = cfg_.codec.latent_size();
  const std::vector<int64_t> shape{c_hat.batch(), cfg_.codec.c_lat, side, side};
  torch::Tensor z;
  if (!steps || *steps == schedule.steps()) {
    z = ldm::sample(ldm::unet_predictor(ctx), shape, schedule, gen);
  } else {
    auto respaced = respace(schedule, *steps);
    auto base = ldm::unet_predictor(ctx);
    ldm::EpsPredictor predict = [&](const torch::Tensor& zt, int64_t i) {
      return base(zt, respaced.timesteps[static_cast<size_t>(i - 1)]);
    };
    z = ldm::sample(predict, shape, respaced.schedule, gen);
  }
  return LatentCode(z / latent_scale);
}

ImageBatch CascSystem::transmit(const ImageBatch& x, double snr_db, uint64_t seed, std::optional<int64_t> steps) {
  torch::NoGradGuard no_grad;
  auto c_hat = received_condition(x, snr_db, seed);
  auto z = denoise(c_hat, seed, steps);
  return codec->decode(z);
}

ImageBatch transmit(CascSystem& system, const ImageBatch& x, double snr_db, uint64_t seed,
                    std::optional<int64_t> steps) {
  return system.transmit(x, snr_db, seed, steps);
}

double evaluate_stage1_loss(CascSystem& system, const data::Dataset& dataset, int64_t count,
                            std::shared_ptr<eval::FeatureNet> perceptual_net) {
  torch::NoGradGuard no_grad;
  const int64_t n = std::min(count, dataset.size());
  std::optional<eval::Lpips> lpips;
  if (perceptual_net) {
    lpips.emplace(std::move(perceptual_net));
  }
  double total = 0.0;
  constexpr int64_t kChunk = 64;
  for (int64_t i = 0; i < n; i += kChunk) {
    const int64_t end = std::min(n, i + kChunk);
    auto x = dataset.images.slice(0, i, end);
    auto z = system.codec->encode(ImageBatch(x));
    auto [x_hat, q] = system.codec->decode_with_vq(z);
    auto loss = codec::autoencoder_loss(x, x_hat, q.commitment_loss, system.config().codec,
                                        lpips ? &*lpips : nullptr);
    total += loss.total.item<double>() * static_cast<double>(end - i);
  }
  return total / static_cast<double>(n);
}

double reconstruction_psnr(CascSystem& system, const data::Dataset& dataset, int64_t batch_size) {
  torch::NoGradGuard no_grad;
  double total = 0.0;
  for (int64_t i = 0; i < dataset.size(); i += batch_size) {
    const int64_t end = std::min(dataset.size(), i + batch_size);
    ImageBatch x(dataset.images.slice(0, i, end));
    auto x_hat = system.codec->decode(system.codec->encode(x));
    total += eval::psnr_per_image(x, x_hat).sum().item<double>();
  }
  return total / static_cast<double>(dataset.size());
}

TrainResult train_stage1(const data::Dataset& dataset, const CascConfig& cfg, const TrainConfig& tc,
                         const TrainOptions& options) {
  if (tc.stage != 1) throw ConfigError("train_stage1 requires stage = 1");
  check_dataset(dataset);
  CascSystem system(cfg, tc.seed);
  auto& codec = system.codec;

  std::optional<eval::Lpips> lpips;
  if (options.perceptual_net) lpips.emplace(options.perceptual_net);
  codec::PatchDiscriminator disc{nullptr};
  std::optional<torch::optim::Adam> disc_opt;
  if (cfg.codec.use_adversarial_term) {
    disc = codec::PatchDiscriminator();
    disc_opt.emplace(disc->parameters(), torch::optim::AdamOptions(tc.lr_initial));
  }

  torch::optim::Adam opt(codec->parameters(), torch::optim::AdamOptions(tc.lr_initial));
  const auto start = Clock::now();
  TrainResult result;
  bool codebook_initialized = false;
  for (int64_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    auto gen = make_generator(mix_seed(tc.seed, static_cast<uint64_t>(epoch)));
    auto order = torch::randperm(dataset.size(), gen, torch::TensorOptions().dtype(torch::kLong));
    double sum = 0.0;
    int64_t seen = 0;
    for (int64_t i = 0; i < dataset.size(); i += tc.batch_size) {
      const int64_t end = std::min(dataset.size(), i + tc.batch_size);
      auto x = batch_of(dataset, order, i, end);
      auto z = codec->encode(x);
      if (!codebook_initialized) {
        // Seed the codebook with encoder outputs so every entry starts in use.
        torch::NoGradGuard no_grad;
        auto vectors = z.tensor().permute({0, 2, 3, 1}).reshape({-1, cfg.codec.c_lat});
        auto pick = torch::randint(0, vectors.size(0), {cfg.codec.codebook_size}, gen,
                                   torch::TensorOptions().dtype(torch::kLong));
        codec->set_codebook(vectors.index_select(0, pick));
        codebook_initialized = true;
      }
      auto [x_hat, q] = codec->decode_with_vq(z);
      auto loss = codec::autoencoder_loss(x.tensor(), x_hat, q.commitment_loss, cfg.codec,
                                          lpips ? &*lpips : nullptr, disc ? &disc : nullptr);
      opt.zero_grad();
      loss.total.backward();
      opt.step();
      if (disc) {
        auto d_loss = codec::discriminator_hinge_loss(disc, x.tensor(), x_hat);
        disc_opt->zero_grad();
        d_loss.backward();
        disc_opt->step();
      }
      sum += loss.total.item<double>() * static_cast<double>(end - i);
      seen += end - i;
    }
    LossLogEntry entry{epoch, sum / static_cast<double>(seen), tc.lr_initial, seconds_since(start)};
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);
  }
  result.final_loss = evaluate_stage1_loss(system, dataset, tc.eval_images,
                                           options.perceptual_net);
  json extra{{"epochs", tc.epochs},
             {"seed", tc.seed},
             {"lr_initial", tc.lr_initial},
             {"final_loss", result.final_loss},
             {"perceptual_net", options.perceptual_net ? options.perceptual_net->name() : "none"}};
  result.checkpoint = system.codec_checkpoint(extra);
  if (disc) result.checkpoint.store_module("discriminator", *disc);
  return result;
}

namespace {

struct Stage2Batch {
  torch::Tensor z0;
  ConditionSignal c_hat;
};

Stage2Batch stage2_inputs(CascSystem& system, const ImageBatch& x, double snr_db, uint64_t noise_seed) {
  torch::Tensor z0;
  {
    torch::NoGradGuard no_grad;
    z0 = system.codec->encode(x).tensor() * system.latent_scale;
  }
  auto c = channel::power_normalize(channel::condition_encode(system.cond_encoder, LatentCode(z0)));
  return {z0, channel::awgn_transmit(c, {snr_db, noise_seed})};
}

torch::Tensor stage2_loss(CascSystem& system, const Stage2Batch& batch, at::Generator& gen) {
  std::optional<can::DynamicWeightSet> weights;
  if (system.can_enabled()) weights = can::generate_weights(system.can, batch.c_hat);
  ldm::DenoiserContext ctx{&system.unet, batch.c_hat.tensor(), weights ? &*weights : nullptr};
  return ldm::denoiser_loss(ctx, batch.z0, system.schedule, gen);
}

}  // namespace

double evaluate_stage2_loss(CascSystem& system, const data::Dataset& dataset, int64_t count,
                            uint64_t seed, const std::vector<double>& snr_grid_db) {
  torch::NoGradGuard no_grad;
  const int64_t n = std::min(count, dataset.size());
  auto gen = make_generator(mix_seed(seed, kEvalStream));
  TrainConfig tc;
  tc.snr_grid_db = snr_grid_db;
  double total = 0.0;
  constexpr int64_t kChunk = 64;
  for (int64_t i = 0; i < n; i += kChunk) {
    const int64_t end = std::min(n, i + kChunk);
    const double snr = draw_snr(tc, gen);
    auto batch = stage2_inputs(system, ImageBatch(dataset.images.slice(0, i, end)), snr,
                               mix_seed(seed, static_cast<uint64_t>(i)));
    total += stage2_loss(system, batch, gen).item<double>() * static_cast<double>(end - i);
  }
  return total / static_cast<double>(n);
}

TrainResult train_stage2(const data::Dataset& dataset, const Checkpoint& codec_ckpt, const CascConfig& cfg,
                         const TrainConfig& tc, const TrainOptions& options) {
  if (tc.stage != 2) throw ConfigError("train_stage2 requires stage = 2");
  check_dataset(dataset);
  if (!codec_ckpt.has_prefix("codec")) throw ConfigError("stage 2 needs a codec checkpoint");

  // The frozen autoencoder's configuration comes from its checkpoint.
  auto run_cfg = cfg;
  run_cfg.codec = config_from_json(codec_ckpt.manifest.at("config")).codec;
  CascSystem system(run_cfg, tc.seed);
  codec_ckpt.restore_module("codec", *system.codec);
  for (auto& p : system.codec->parameters()) p.set_requires_grad(false);

  {
    torch::NoGradGuard no_grad;
    const int64_t n = std::min<int64_t>(dataset.size(), 512);
    auto z = system.codec->encode(ImageBatch(dataset.images.slice(0, 0, n))).tensor();
    const double std = z.std().item<double>();
    system.latent_scale = std > 0.0 ? 1.0 / std : 1.0;
  }

  std::vector<torch::Tensor> params;
  for (auto& p : system.cond_encoder->parameters()) params.push_back(p);
  for (auto& p : system.unet->parameters()) params.push_back(p);
  if (system.can) {
    for (auto& p : system.can->parameters()) params.push_back(p);
  }
  torch::optim::Adam opt(params, torch::optim::AdamOptions(tc.lr_initial));

  const auto start = Clock::now();
  TrainResult result;
  uint64_t step = 0;
  for (int64_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    auto gen = make_generator(mix_seed(tc.seed ^ 0x2ULL, static_cast<uint64_t>(epoch)));
    auto order = torch::randperm(dataset.size(), gen, torch::TensorOptions().dtype(torch::kLong));
    double sum = 0.0;
    int64_t seen = 0;
    for (int64_t i = 0; i < dataset.size(); i += tc.batch_size) {
      const int64_t end = std::min(dataset.size(), i + tc.batch_size);
      const double snr = draw_snr(tc, gen);
      auto batch = stage2_inputs(system, batch_of(dataset, order, i, end), snr, mix_seed(tc.seed, step++));
      auto loss = stage2_loss(system, batch, gen);
      opt.zero_grad();
      loss.backward();
      opt.step();
      sum += loss.item<double>() * static_cast<double>(end - i);
      seen += end - i;
    }
    LossLogEntry entry{epoch, sum / static_cast<double>(seen), tc.lr_initial, seconds_since(start)};
    result.log.push_back(entry);
    if (options.on_epoch) options.on_epoch(entry);
  }
  result.final_loss = evaluate_stage2_loss(system, dataset, tc.eval_images, tc.seed, tc.snr_grid_db);
  json extra{{"epochs", tc.epochs},
             {"seed", tc.seed},
             {"lr_initial", tc.lr_initial},
             {"final_loss", result.final_loss},
             {"snr_protocol", tc.snr_protocol()},
             {"codec_sha256", codec_ckpt.manifest.value("sha256", "")}};
  result.checkpoint = system.full_checkpoint(extra);
  return result;
}

}  // namespace casc::pipeline
