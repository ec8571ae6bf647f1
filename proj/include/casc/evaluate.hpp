#pragma once

// Evaluation harness: metric records over (system, cr, snr) cells, the CAN
// ablation, and the latent-grid vs pixel-grid denoiser timing benchmark.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "casc/channel.hpp"
#include "casc/cifar.hpp"
#include "casc/metrics.hpp"
#include "casc/pipeline.hpp"
#include "casc/tensors.hpp"

namespace casc::eval {

struct MetricsRecord {
  std::string system;
  channel::Rational cr;
  double snr_db = 0.0;
  double psnr_db = 0.0;
  double lpips = 0.0;
  double fid = 0.0;
  int64_t n_images = 0;
  uint64_t seed = 0;
  std::string ckpt_id;
};

/// "system,cr,snr_db,psnr_db,lpips,fid,n_images,seed,ckpt_id"
std::string csv_header();
std::string csv_row(const MetricsRecord& record);
void write_records_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);

/// Image -> channel -> image for one system; deterministic in (x, snr_db, seed).
using TransmitFn = std::function<ImageBatch(const ImageBatch& x, double snr_db, uint64_t seed)>;

struct EvalOptions {
  int64_t n_images = 256;
  int64_t batch_size = 64;
  uint64_t seed = 0;
};

/// Runs the first n_images of `test` through `transmit` at `snr_db` and scores the
/// reconstructions. Batch k uses channel/sampler seed mix_seed(seed, k).
MetricsRecord evaluate_cell(const TransmitFn& transmit, const std::string& system, const channel::Rational& cr,
                            double snr_db, const data::Dataset& test, const MetricAssets& assets,
                            const EvalOptions& options, const std::string& ckpt_id = "");

/// One record per SNR, in grid order.
std::vector<MetricsRecord> evaluate_grid(const TransmitFn& transmit, const std::string& system,
                                         const channel::Rational& cr, const std::vector<double>& snr_grid_db,
                                         const data::Dataset& test, const MetricAssets& assets,
                                         const EvalOptions& options, const std::string& ckpt_id = "");

struct AblationCell {
  channel::Rational cr;
  double snr_db = 0.0;
};

struct AblationRow {
  MetricsRecord with_can;
  MetricsRecord without_can;
};

/// Paired evaluation of a CAN system and its CAN-free counterpart. Both systems must
/// share the configuration apart from CAN enablement and every cell must use their
/// compression ratio; otherwise ConfigError. Writes a comparison CSV when
/// `csv_path` is non-empty.
std::vector<AblationRow> run_ablation(const data::Dataset& test, pipeline::CascSystem& with_can,
                                      pipeline::CascSystem& without_can, const std::vector<AblationCell>& grid,
                                      const MetricAssets& assets, const EvalOptions& options,
                                      std::optional<int64_t> steps = {},
                                      const std::filesystem::path& csv_path = {});

enum class BenchSystem { Casc, PixelProxy };
std::string to_string(BenchSystem system);

struct BenchOptions {
  int64_t batch_size = 256;
  int64_t repetitions = 5;
  int64_t warmup = 1;
  int64_t base_channels = 64;
  uint64_t seed = 0;
};

struct BenchResult {
  BenchSystem system = BenchSystem::Casc;
  int64_t grid = 0;               // spatial side the U-Net runs on
  std::vector<double> runs_ms;    // one timed denoiser step per repetition
  double median_ms = 0.0;
  double ms_per_image = 0.0;
};

/// Times one conditioned U-Net step (CAN weights included). CASC runs on the 8 x 8
/// latent grid with 4 channels, the proxy on the 32 x 32 image grid with 3.
BenchResult benchmark_inference(BenchSystem system, const BenchOptions& options);

}  // namespace casc::eval
