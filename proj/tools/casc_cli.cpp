// casc: command-line front end for ingestion, training, evaluation and reporting.

#include <algorithm>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "casc/cifar.hpp"
#include "casc/config.hpp"
#include "casc/deepjscc.hpp"
#include "casc/errors.hpp"
#include "casc/evaluate.hpp"
#include "casc/experiment.hpp"
#include "casc/hashing.hpp"
#include "casc/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<uint64_t> seed;
  std::optional<double> snr_db;
  std::string cr;
  std::optional<int64_t> steps;
  std::string out = "runs";
  bool no_can = false;
  std::string device = "cpu";
  bool allow_uncalibrated = false;
};

casc::CascConfig resolve_config(const Common& c) {
  auto cfg = c.config.empty() ? casc::CascConfig{} : casc::load_config(c.config);
  if (c.seed) cfg.train.seed = cfg.channel.seed = *c.seed;
  if (!c.cr.empty()) cfg.channel.cr = casc::channel::Rational::parse(c.cr);
  if (c.no_can) cfg.can_enabled = false;
  if (c.allow_uncalibrated) cfg.eval.allow_uncalibrated = true;
  cfg.validate();
  return cfg;
}

void check_device(const Common& c) {
  if (c.device != "cpu") throw casc::ConfigError("device '" + c.device + "' is not supported; use --device cpu");
}

casc::eval::MetricAssets assets_for(const casc::CascConfig& cfg, uint64_t seed) {
  casc::eval::AssetOptions opt;
  if (!cfg.eval.asset_dir.empty()) opt.dir = cfg.eval.asset_dir;
  opt.allow_uncalibrated = cfg.eval.allow_uncalibrated;
  opt.fallback_seed = seed;
  opt.lpips_sha256 = cfg.eval.lpips_sha256;
  opt.fid_sha256 = cfg.eval.fid_sha256;
  auto assets = casc::eval::load_metric_assets(opt);
  std::cerr << "metric backend: " << assets.describe() << '\n';
  return assets;
}

casc::data::CifarSplit load_data(const std::string& dir) {
  const bool official = fs::exists(fs::path(dir) / "data_batch_5.bin");
  return official ? casc::data::ingest_cifar10(dir) : casc::data::load_cifar_format(dir);
}

casc::data::Dataset limit(const casc::data::Dataset& d, int64_t n) {
  return n > 0 && n < d.size() ? d.slice(0, n) : d;
}

void progress(const casc::pipeline::LossLogEntry& e) {
  std::cerr << "epoch " << e.epoch << "  loss " << std::setprecision(6) << e.loss << "  " << std::fixed
            << std::setprecision(1) << e.wall_seconds << "s" << std::defaultfloat << '\n';
}

void write_manifest(const fs::path& out, const std::string& command, const casc::CascConfig& cfg,
                    std::map<std::string, uint64_t> seeds, std::vector<fs::path> ckpts, json extra = json::object()) {
  casc::experiment::RunManifest m{command, casc::to_json(cfg), std::move(seeds), std::move(ckpts), std::move(extra)};
  casc::experiment::write_run_manifest(out / "manifest.json", m);
}

std::vector<double> snr_grid(const Common& c, const casc::CascConfig& cfg) {
  if (c.snr_db) return {*c.snr_db};
  return cfg.train.snr_grid_db;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Condition-aware semantic communication: training, evaluation and reporting"};
  app.require_subcommand(1);
  app.fallthrough();
  Common c;
  app.add_option("--config", c.config, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", c.seed, "Seed for training, channel noise and sampling");
  app.add_option("--snr-db", c.snr_db, "Channel SNR in dB (training: fixed SNR; evaluation: single SNR)");
  app.add_option("--cr", c.cr, "Compression ratio")->check(CLI::IsMember({"1/48", "1/96"}));
  app.add_option("--steps", c.steps, "Diffusion steps (training: T; evaluation: sampler steps)")
      ->check(CLI::PositiveNumber);
  app.add_option("--out", c.out, "Output directory");
  app.add_flag("--no-can", c.no_can, "Disable the condition-aware network (ablation)");
  app.add_option("--device", c.device, "Compute device");
  app.add_flag("--allow-uncalibrated", c.allow_uncalibrated,
               "Use seeded random metric networks when pretrained assets are missing");

  std::string data_dir;
  int64_t train_limit = 0;
  int64_t n_images = 0;
  std::vector<std::string> ckpts;

  auto* ingest = app.add_subcommand("ingest", "Parse and verify CIFAR-10 binary batches");
  ingest->add_option("--data", data_dir, "Directory with data_batch_*.bin and test_batch.bin");
  int64_t synthetic = 0;
  int64_t synthetic_test = 1000;
  ingest->add_option("--synthetic", synthetic, "Write N synthetic training images in CIFAR format to --out first");
  ingest->add_option("--synthetic-test", synthetic_test, "Synthetic test images");

  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--data", data_dir, "CIFAR-format data directory")->required();
    sub->add_option("--train-limit", train_limit, "Use only the first N training images");
  };
  auto* s1 = app.add_subcommand("train-stage1", "Train the semantic autoencoder");
  add_data(s1);
  auto* s2 = app.add_subcommand("train-stage2", "Train condition encoder, CAN and U-Net on a frozen codec");
  add_data(s2);
  std::string codec_ckpt;
  s2->add_option("--codec", codec_ckpt, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  auto* tb = app.add_subcommand("train-baseline", "Train a DeepJSCC baseline");
  add_data(tb);
  std::string loss_kind = "mse";
  tb->add_option("--loss", loss_kind, "Training loss")->check(CLI::IsMember({"mse", "lpips"}));
  int64_t baseline_width = 64;
  tb->add_option("--width", baseline_width, "Hidden channels");

  auto* ev = app.add_subcommand("evaluate", "Score checkpoints over the SNR grid; writes results.csv and plots");
  ev->add_option("--data", data_dir, "CIFAR-format data directory")->required();
  ev->add_option("--ckpt", ckpts, "Checkpoints to evaluate")->required()->check(CLI::ExistingFile);
  ev->add_option("--n-images", n_images, "Test images per cell");

  auto* ab = app.add_subcommand("ablate", "Paired evaluation with and without the CAN");
  ab->add_option("--data", data_dir, "CIFAR-format data directory")->required();
  std::string ckpt_can, ckpt_plain;
  ab->add_option("--ckpt", ckpt_can, "Checkpoint trained with the CAN")->required()->check(CLI::ExistingFile);
  ab->add_option("--ckpt-no-can", ckpt_plain, "Checkpoint trained without the CAN (default: same weights, CAN off)")
      ->check(CLI::ExistingFile);
  ab->add_option("--n-images", n_images, "Test images per cell");

  auto* bench = app.add_subcommand("bench-speed", "Latent-grid vs pixel-grid denoiser step timing");
  casc::eval::BenchOptions bopt;
  bench->add_option("--batch", bopt.batch_size, "Batch size");
  bench->add_option("--reps", bopt.repetitions, "Timed repetitions")->check(CLI::Range(5, 1000));
  bench->add_option("--width", bopt.base_channels, "U-Net base width");

  auto* vis = app.add_subcommand("visualize", "Write a labelled grid of originals and reconstructions");
  vis->add_option("--data", data_dir, "CIFAR-format data directory")->required();
  vis->add_option("--ckpt", ckpts, "Checkpoints")->required()->check(CLI::ExistingFile);
  int64_t count = 1;
  vis->add_option("--count", count, "Test images")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    check_device(c);
    const fs::path out = c.out;
    fs::create_directories(out);
    auto cfg = resolve_config(c);
    const uint64_t seed = cfg.train.seed;

    if (ingest->parsed()) {
      if (synthetic > 0) {
        casc::data::write_synthetic_cifar(out, synthetic, synthetic_test, seed);
        if (data_dir.empty()) data_dir = out.string();
      }
      if (data_dir.empty()) throw casc::ArgumentError("ingest needs --data or --synthetic");
      auto split = load_data(data_dir);
      std::vector<fs::path> bins;
      for (const auto& e : fs::directory_iterator(data_dir)) {
        if (e.path().extension() == ".bin") bins.push_back(e.path());
      }
      std::sort(bins.begin(), bins.end());
      json files = json::array();
      for (const auto& p : bins) {
        const int64_t records = casc::data::verify_round_trip(p);
        files.push_back({{"file", p.filename().string()}, {"records", records}, {"sha256", casc::sha256_file(p)}});
      }
      std::cout << "train images: " << split.train.size() << "\ntest images:  " << split.test.size() << '\n';
      write_manifest(out, "ingest", cfg, {{"seed", seed}}, {},
                     {{"data_dir", data_dir}, {"train_images", split.train.size()},
                      {"test_images", split.test.size()}, {"files", files}});
      return 0;
    }

    if (s1->parsed()) {
      auto train = limit(load_data(data_dir).train, train_limit);
      auto tc = casc::pipeline::TrainConfig::from(cfg, 1);
      casc::pipeline::TrainOptions opt{progress, nullptr};
      if (cfg.codec.perceptual_weight > 0) opt.perceptual_net = assets_for(cfg, seed).lpips_net;
      auto result = casc::pipeline::train_stage1(train, cfg, tc, opt);
      const auto ckpt = out / "stage1.ckpt";
      result.checkpoint.save(ckpt);
      casc::pipeline::write_loss_log(out / "loss_stage1.csv", result.log);
      write_manifest(out, "train-stage1", cfg, {{"seed", seed}}, {ckpt},
                     {{"final_loss", result.final_loss}, {"train_images", train.size()}});
      std::cout << "wrote " << ckpt << " (final loss " << result.final_loss << ")\n";
      return 0;
    }

    if (s2->parsed()) {
      auto train = limit(load_data(data_dir).train, train_limit);
      if (c.steps) cfg.ldm.steps = *c.steps;
      auto tc = casc::pipeline::TrainConfig::from(cfg, 2);
      if (c.snr_db) tc.snr_db_train = c.snr_db;
      auto codec = casc::Checkpoint::load(codec_ckpt);
      auto result = casc::pipeline::train_stage2(train, codec, cfg, tc, {progress, nullptr});
      const auto ckpt = out / "casc.ckpt";
      result.checkpoint.save(ckpt);
      casc::pipeline::write_loss_log(out / "loss_stage2.csv", result.log);
      write_manifest(out, "train-stage2", cfg, {{"seed", seed}}, {codec_ckpt, ckpt},
                     {{"final_loss", result.final_loss}, {"snr_protocol", tc.snr_protocol()}});
      std::cout << "wrote " << ckpt << " (final loss " << result.final_loss << ")\n";
      return 0;
    }

    if (tb->parsed()) {
      auto train = limit(load_data(data_dir).train, train_limit);
      casc::baseline::DeepJsccConfig bcfg;
      bcfg.cr = cfg.channel.cr;
      bcfg.width = baseline_width;
      bcfg.loss = casc::baseline::loss_kind_from_string(loss_kind);
      auto tc = casc::pipeline::TrainConfig::from(cfg, 1);
      if (c.snr_db) tc.snr_db_train = c.snr_db;
      std::shared_ptr<casc::eval::FeatureNet> net;
      if (bcfg.loss == casc::baseline::LossKind::Lpips) net = assets_for(cfg, seed).lpips_net;
      auto result = casc::baseline::train_deepjscc(train, bcfg, tc, net, {progress, nullptr});
      const auto ckpt = out / (casc::baseline::system_name(bcfg.loss) + ".ckpt");
      result.checkpoint.save(ckpt);
      casc::pipeline::write_loss_log(out / "loss_baseline.csv", result.log);
      write_manifest(out, "train-baseline", cfg, {{"seed", seed}}, {ckpt}, {{"final_loss", result.final_loss}});
      std::cout << "wrote " << ckpt << '\n';
      return 0;
    }

    if (ev->parsed()) {
      auto test = load_data(data_dir).test;
      casc::experiment::ExperimentSpec spec;
      spec.name = "evaluate";
      spec.out_dir = out;
      spec.seed = seed;
      spec.n_images = n_images > 0 ? n_images : cfg.eval.n_images;
      spec.steps = c.steps;
      for (const auto& path : ckpts) {
        auto sys = casc::experiment::load_system(path, {c.steps, c.no_can});
        spec.checkpoints[casc::experiment::checkpoint_key(sys.name, sys.cr)] = path;
        for (double snr : snr_grid(c, cfg)) spec.grid.push_back({sys.name, sys.cr, snr});
      }
      auto assets = assets_for(cfg, seed);
      auto result = casc::experiment::run_experiment(spec, test, assets);
      std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
      write_manifest(out, "evaluate", cfg, {{"seed", seed}}, paths,
                     {{"metric_backend", assets.describe()}, {"n_images", spec.n_images}});
      std::cout << casc::eval::csv_header() << '\n';
      for (const auto& r : result.records) std::cout << casc::eval::csv_row(r) << '\n';
      return 0;
    }

    if (ab->parsed()) {
      auto test = load_data(data_dir).test;
      auto with = casc::pipeline::CascSystem::from_checkpoint(casc::Checkpoint::load(ckpt_can));
      auto without = casc::pipeline::CascSystem::from_checkpoint(
          casc::Checkpoint::load(ckpt_plain.empty() ? ckpt_can : ckpt_plain));
      if (without.has_can()) without.set_can_enabled(false);
      std::vector<casc::eval::AblationCell> grid;
      for (double snr : snr_grid(c, cfg)) grid.push_back({with.config().channel.cr, snr});
      auto assets = assets_for(cfg, seed);
      casc::eval::EvalOptions opt{n_images > 0 ? n_images : cfg.eval.n_images, 64, seed};
      auto rows = casc::eval::run_ablation(test, with, without, grid, assets, opt, c.steps, out / "ablation.csv");
      std::vector<fs::path> paths{ckpt_can};
      if (!ckpt_plain.empty()) paths.emplace_back(ckpt_plain);
      write_manifest(out, "ablate", cfg, {{"seed", seed}}, paths, {{"metric_backend", assets.describe()}});
      for (const auto& r : rows) {
        std::cout << "snr " << r.with_can.snr_db << " dB  psnr " << r.with_can.psnr_db << " vs "
                  << r.without_can.psnr_db << "  lpips " << r.with_can.lpips << " vs " << r.without_can.lpips
                  << '\n';
      }
      return 0;
    }

    if (bench->parsed()) {
      bopt.seed = seed;
      auto latent = casc::eval::benchmark_inference(casc::eval::BenchSystem::Casc, bopt);
      auto pixel = casc::eval::benchmark_inference(casc::eval::BenchSystem::PixelProxy, bopt);
      json j;
      for (const auto* r : {&latent, &pixel}) {
        j[casc::eval::to_string(r->system)] = {
            {"grid", r->grid}, {"runs_ms", r->runs_ms}, {"median_ms", r->median_ms}, {"ms_per_image", r->ms_per_image}};
      }
      j["batch_size"] = bopt.batch_size;
      j["reduction_percent"] = 100.0 * (1.0 - latent.median_ms / pixel.median_ms);
      std::ofstream(out / "bench.json") << j.dump(2) << '\n';
      write_manifest(out, "bench-speed", cfg, {{"seed", seed}}, {}, j);
      std::cout << std::fixed << std::setprecision(3) << "latent 8x8:  " << latent.ms_per_image << " ms/image\n"
                << "pixel 32x32: " << pixel.ms_per_image << " ms/image\n"
                << "reduction:   " << std::setprecision(1) << j["reduction_percent"].get<double>() << " %\n";
      return 0;
    }

    if (vis->parsed()) {
      auto test = load_data(data_dir).test;
      casc::ImageBatch x(test.images.slice(0, 0, std::min(count, test.size())));
      const double snr = c.snr_db.value_or(20.0);
      std::vector<std::pair<std::string, casc::ImageBatch>> entries{{"original", x}};
      for (const auto& path : ckpts) {
        auto sys = casc::experiment::load_system(path, {c.steps, c.no_can});
        entries.emplace_back(sys.name, sys.transmit(x, snr, seed));
      }
      const auto png = out / "visual_grid.png";
      auto layout = casc::experiment::export_visual_grid(entries, png);
      std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
      write_manifest(out, "visualize", cfg, {{"seed", seed}}, paths,
                     {{"snr_db", snr}, {"rows", layout.rows}, {"cols", layout.cols}});
      std::cout << "wrote " << png << " (" << layout.rows << "x" << layout.cols << ")\n";
      return 0;
    }
  } catch (const casc::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
