#include "casc/evaluate.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "casc/errors.hpp"

namespace casc::eval {

std::string csv_header() { return "system,cr,snr_db,psnr_db,lpips,fid,n_images,seed,ckpt_id"; }

std::string csv_row(const MetricsRecord& r) {
  std::ostringstream s;
  s << std::setprecision(10) << r.system << ',' << r.cr.str() << ',' << r.snr_db << ',' << r.psnr_db << ','
    << r.lpips << ',' << r.fid << ',' << r.n_images << ',' << r.seed << ',' << r.ckpt_id;
  return s.str();
}

void write_records_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << csv_header() << '\n';
  for (const auto& r : records) out << csv_row(r) << '\n';
}

MetricsRecord evaluate_cell(const TransmitFn& transmit, const std::string& system, const channel::Rational& cr,
                            double snr_db, const data::Dataset& test, const MetricAssets& assets,
                            const EvalOptions& options, const std::string& ckpt_id) {
  torch::NoGradGuard no_grad;
  const int64_t n = std::min(options.n_images, test.size());
  if (n < 1) throw DataError("evaluation set is empty");
  const Lpips lpips(assets.lpips_net);
  std::vector<torch::Tensor> outputs;
  double psnr_sum = 0.0;
  double lpips_sum = 0.0;
  uint64_t k = 0;
  for (int64_t i = 0; i < n; i += options.batch_size, ++k) {
    const int64_t end = std::min(n, i + options.batch_size);
    ImageBatch x(test.images.slice(0, i, end));
    auto x_hat = transmit(x, snr_db, mix_seed(options.seed, k));
    psnr_sum += psnr_per_image(x, x_hat).sum().item<double>();
    lpips_sum += lpips.distance(x.tensor(), x_hat.tensor()).sum().item<double>();
    outputs.push_back(x_hat.tensor());
  }
  MetricsRecord r;
  r.system = system;
  r.cr = cr;
  r.snr_db = snr_db;
  r.psnr_db = psnr_sum / static_cast<double>(n);
  r.lpips = lpips_sum / static_cast<double>(n);
  r.fid = fid_images(*assets.fid_extractor, test.images.slice(0, 0, n), torch::cat(outputs));
  r.n_images = n;
  r.seed = options.seed;
  r.ckpt_id = ckpt_id;
  return r;
}

std::vector<MetricsRecord> evaluate_grid(const TransmitFn& transmit, const std::string& system,
                                         const channel::Rational& cr, const std::vector<double>& snr_grid_db,
                                         const data::Dataset& test, const MetricAssets& assets,
                                         const EvalOptions& options, const std::string& ckpt_id) {
  std::vector<MetricsRecord> out;
  for (double snr : snr_grid_db) {
    out.push_back(evaluate_cell(transmit, system, cr, snr, test, assets, options, ckpt_id));
  }
  return out;
}

namespace {

channel::Rational system_cr(const pipeline::CascSystem& s) { return s.config().channel.cr; }

void check_ablation_pair(const pipeline::CascSystem& a, const pipeline::CascSystem& b) {
  if (!a.can_enabled()) throw ConfigError("ablation: the first system must have CAN enabled");
  if (b.can_enabled()) throw ConfigError("ablation: the second system must have CAN disabled");
  auto ja = to_json(a.config());
  auto jb = to_json(b.config());
  ja.erase("can");
  jb.erase("can");
  if (ja != jb) throw ConfigError("ablation: the two systems differ beyond CAN enablement");
}

}  // namespace

std::vector<AblationRow> run_ablation(const data::Dataset& test, pipeline::CascSystem& with_can,
                                      pipeline::CascSystem& without_can, const std::vector<AblationCell>& grid,
                                      const MetricAssets& assets, const EvalOptions& options,
                                      std::optional<int64_t> steps, const std::filesystem::path& csv_path) {
  check_ablation_pair(with_can, without_can);
  const auto cr = system_cr(with_can);
  for (const auto& cell : grid) {
    if (!(cell.cr == cr)) {
      throw ConfigError("ablation grid cell cr " + cell.cr.str() + " does not match the systems' cr " + cr.str());
    }
  }
  auto fn = [steps](pipeline::CascSystem& s) -> TransmitFn {
    return [&s, steps](const ImageBatch& x, double snr, uint64_t seed) { return s.transmit(x, snr, seed, steps); };
  };
  std::vector<AblationRow> rows;
  for (const auto& cell : grid) {
    AblationRow row;
    row.with_can = evaluate_cell(fn(with_can), "casc", cell.cr, cell.snr_db, test, assets, options);
    row.without_can = evaluate_cell(fn(without_can), "casc-no-can", cell.cr, cell.snr_db, test, assets, options);
    rows.push_back(std::move(row));
  }
  if (!csv_path.empty()) {
    if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + csv_path.string());
    out << std::setprecision(10)
        << "cr,snr_db,psnr_can,psnr_no_can,lpips_can,lpips_no_can,fid_can,fid_no_can,n_images,seed\n";
    for (const auto& r : rows) {
      out << r.with_can.cr.str() << ',' << r.with_can.snr_db << ',' << r.with_can.psnr_db << ','
          << r.without_can.psnr_db << ',' << r.with_can.lpips << ',' << r.without_can.lpips << ','
          << r.with_can.fid << ',' << r.without_can.fid << ',' << r.with_can.n_images << ',' << r.with_can.seed
          << '\n';
    }
  }
  return rows;
}

std::string to_string(BenchSystem system) { return system == BenchSystem::Casc ? "casc" : "pixel_space_dm_proxy"; }

BenchResult benchmark_inference(BenchSystem system, const BenchOptions& options) {
  if (options.repetitions < 1 || options.batch_size < 1) throw ConfigError("benchmark needs positive sizes");
  torch::NoGradGuard no_grad;
  torch::manual_seed(options.seed);
  ldm::UNetConfig cfg;
  cfg.base_channels = options.base_channels;
  cfg.condition_channels = 2;
  cfg.condition_grid = 8;
  if (system == BenchSystem::Casc) {
    cfg.in_channels = 4;
    cfg.grid_size = 8;
  } else {
    cfg.in_channels = 3;
    cfg.grid_size = 32;
  }
  ldm::UNet unet(cfg);
  unet->eval();
  can::CanNetwork can(cfg.condition_length(), unet->layer_groups());

  auto gen = make_generator(options.seed);
  const int64_t b = options.batch_size;
  auto z = torch::randn({b, cfg.in_channels, cfg.grid_size, cfg.grid_size}, gen);
  ConditionSignal c(torch::randn({b, cfg.condition_length()}, gen));
  auto step = [&] {
    auto w = can::generate_weights(can, c);
    return unet->forward(z, c.tensor(), torch::full({b}, 500, torch::kLong), &w);
  };

  for (int64_t i = 0; i < options.warmup; ++i) step();
  BenchResult result;
  result.system = system;
  result.grid = cfg.grid_size;
  for (int64_t i = 0; i < options.repetitions; ++i) {
    const auto start = std::chrono::steady_clock::now();
    auto out = step();
    (void)out.sum().item<float>();
    result.runs_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count());
  }
  auto sorted = result.runs_ms;
  std::sort(sorted.begin(), sorted.end());
  const size_t m = sorted.size();
  result.median_ms = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
  result.ms_per_image = result.median_ms / static_cast<double>(b);
  return result;
}

}  // namespace casc::eval
