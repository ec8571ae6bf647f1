#include "casc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "casc/checkpoint.hpp"
#include "casc/cifar.hpp"
#include "casc/deepjscc.hpp"
#include "casc/errors.hpp"
#include "casc/hashing.hpp"
#include "casc/pipeline.hpp"

namespace casc::experiment {

using nlohmann::json;

LoadedSystem load_system(const fs::path& ckpt_path, const LoadOptions& options) {
  auto ckpt = Checkpoint::load(ckpt_path);
  LoadedSystem out;
  out.ckpt_id = sha256_file(ckpt_path).substr(0, 16);
  const auto kind = ckpt.manifest.value("system", "");
  if (kind == "casc") {
    if (ckpt.manifest.value("stage", 0) < 2) {
      throw ConfigError(ckpt_path.string() + " holds only a stage-1 codec; train stage 2 first");
    }
    auto system = std::make_shared<pipeline::CascSystem>(pipeline::CascSystem::from_checkpoint(ckpt));
    if (options.no_can && system->has_can()) system->set_can_enabled(false);
    out.name = system->can_enabled() ? "casc" : "casc-no-can";
    out.cr = system->config().channel.cr;
    auto steps = options.steps;
    auto* raw = system.get();
    out.transmit = [raw, steps](const ImageBatch& x, double snr, uint64_t seed) {
      return raw->transmit(x, snr, seed, steps);
    };
    out.owner = system;
    return out;
  }
  if (kind.rfind("deepjscc", 0) == 0) {
    auto model = std::make_shared<baseline::DeepJscc>(baseline::deepjscc_from_checkpoint(ckpt));
    (*model)->eval();
    out.name = kind;
    out.cr = (*model)->config().cr;
    auto* raw = model.get();
    out.transmit = [raw](const ImageBatch& x, double snr, uint64_t seed) {
      torch::NoGradGuard no_grad;
      return ImageBatch((*raw)->forward(x, snr, seed));
    };
    out.owner = model;
    return out;
  }
  throw ConfigError(ckpt_path.string() + " is not a recognised checkpoint (system '" + kind + "')");
}

std::string checkpoint_key(const std::string& system, const channel::Rational& cr) {
  return system + "@" + cr.str();
}

std::vector<ExperimentCell> full_grid(const std::vector<std::string>& systems,
                                      const std::vector<channel::Rational>& crs,
                                      const std::vector<double>& snr_grid_db) {
  std::vector<ExperimentCell> grid;
  for (const auto& s : systems)
    for (const auto& cr : crs)
      for (double snr : snr_grid_db) grid.push_back({s, cr, snr});
  return grid;
}

namespace {

std::string format_number(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

std::string cr_slug(const channel::Rational& cr) { return std::to_string(cr.num) + "-" + std::to_string(cr.den); }

void write_failure(const fs::path& path, const ExperimentSpec& spec, const ExperimentCell& cell, size_t index,
                   const std::string& what) {
  json j{{"experiment", spec.name},
         {"failed_cell", {{"index", index}, {"system", cell.system}, {"cr", cell.cr.str()}, {"snr_db", cell.snr_db}}},
         {"error", what},
         {"completed_cells", index}};
  std::ofstream(path, std::ios::trunc) << j.dump(2) << '\n';
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const data::Dataset& test,
                                const eval::MetricAssets& assets) {
  if (spec.grid.empty()) throw ConfigError("experiment grid is empty");
  if (spec.out_dir.empty()) throw ConfigError("experiment needs an output directory");

  // Resolve every cell before running any.
  std::map<std::string, LoadedSystem> systems;
  for (const auto& cell : spec.grid) {
    const auto key = checkpoint_key(cell.system, cell.cr);
    if (systems.count(key)) continue;
    auto it = spec.checkpoints.find(key);
    const bool no_can = cell.system == "casc-no-can";
    if (it == spec.checkpoints.end() && no_can) it = spec.checkpoints.find(checkpoint_key("casc", cell.cr));
    if (it == spec.checkpoints.end()) throw ConfigError("no checkpoint for grid cell " + key);
    if (!fs::exists(it->second)) throw ConfigError("checkpoint for " + key + " not found: " + it->second.string());
    auto loaded = load_system(it->second, {spec.steps, no_can});
    if (loaded.name != cell.system || !(loaded.cr == cell.cr)) {
      throw ConfigError("checkpoint " + it->second.string() + " is " + checkpoint_key(loaded.name, loaded.cr) +
                        ", expected " + key);
    }
    systems.emplace(key, std::move(loaded));
  }

  fs::create_directories(spec.out_dir);
  ExperimentResult result;
  result.csv = spec.out_dir / "results.csv";
  eval::EvalOptions opts{spec.n_images, spec.batch_size, spec.seed};
  for (size_t i = 0; i < spec.grid.size(); ++i) {
    const auto& cell = spec.grid[i];
    const auto& sys = systems.at(checkpoint_key(cell.system, cell.cr));
    try {
      result.records.push_back(
          eval::evaluate_cell(sys.transmit, cell.system, cell.cr, cell.snr_db, test, assets, opts, sys.ckpt_id));
    } catch (const std::exception& e) {
      eval::write_records_csv(result.csv, result.records);
      write_failure(spec.out_dir / "failure.json", spec, cell, i, e.what());
      throw;
    }
  }
  eval::write_records_csv(result.csv, result.records);
  result.plots = plot_records(spec.out_dir, result.records);
  return result;
}

void plot_metric_vs_snr(const fs::path& path, const std::string& title, const std::string& y_label,
                        const std::vector<Series>& series) {
  constexpr int kW = 720, kH = 480, kLeft = 80, kRight = 180, kTop = 50, kBottom = 60;
  cv::Mat img(kH, kW, CV_8UC3, cv::Scalar(255, 255, 255));
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series)
    for (auto [x, y] : s.points) {
      if (!std::isfinite(y)) continue;
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 - x0 < 1e-9) x0 -= 1, x1 += 1;
  if (y1 - y0 < 1e-9) y0 -= 0.5 * std::max(1e-3, std::abs(y0)), y1 += 0.5 * std::max(1e-3, std::abs(y1));
  const double pad = 0.08 * (y1 - y0);
  y0 -= pad, y1 += pad;

  const int pw = kW - kLeft - kRight, ph = kH - kTop - kBottom;
  auto px = [&](double x) { return kLeft + static_cast<int>(std::lround((x - x0) / (x1 - x0) * pw)); };
  auto py = [&](double y) { return kTop + ph - static_cast<int>(std::lround((y - y0) / (y1 - y0) * ph)); };
  const cv::Scalar black(0, 0, 0), grey(200, 200, 200);
  const int font = cv::FONT_HERSHEY_SIMPLEX;

  cv::rectangle(img, {kLeft, kTop}, {kLeft + pw, kTop + ph}, black, 1);
  std::set<double> xticks;
  for (const auto& s : series)
    for (auto [x, y] : s.points) xticks.insert(x);
  for (double x : xticks) {
    cv::line(img, {px(x), kTop}, {px(x), kTop + ph}, grey, 1);
    cv::putText(img, format_number(x), {px(x) - 8, kTop + ph + 20}, font, 0.45, black, 1, cv::LINE_AA);
  }
  for (int k = 0; k <= 4; ++k) {
    const double y = y0 + (y1 - y0) * k / 4.0;
    cv::line(img, {kLeft, py(y)}, {kLeft + pw, py(y)}, grey, 1);
    cv::putText(img, format_number(y, 4), {6, py(y) + 4}, font, 0.4, black, 1, cv::LINE_AA);
  }
  cv::putText(img, "SNR (dB)", {kLeft + pw / 2 - 35, kH - 15}, font, 0.5, black, 1, cv::LINE_AA);
  cv::putText(img, y_label, {6, kTop - 12}, font, 0.5, black, 1, cv::LINE_AA);
  cv::putText(img, title, {kLeft + 60, 24}, font, 0.6, black, 1, cv::LINE_AA);

  static const cv::Scalar kColors[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                                       {189, 103, 148}, {75, 86, 140}};
  for (size_t i = 0; i < series.size(); ++i) {
    const auto& color = kColors[i % std::size(kColors)];
    auto pts = series[i].points;
    std::sort(pts.begin(), pts.end());
    std::vector<cv::Point> poly;
    for (auto [x, y] : pts)
      if (std::isfinite(y)) poly.emplace_back(px(x), py(y));
    if (poly.size() > 1) cv::polylines(img, poly, false, color, 2, cv::LINE_AA);
    for (const auto& p : poly) cv::circle(img, p, 4, color, cv::FILLED, cv::LINE_AA);
    const int ly = kTop + 20 + 22 * static_cast<int>(i);
    cv::line(img, {kLeft + pw + 12, ly - 4}, {kLeft + pw + 36, ly - 4}, color, 2);
    cv::putText(img, series[i].label, {kLeft + pw + 42, ly}, font, 0.45, black, 1, cv::LINE_AA);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write plot " + path.string());
}

std::vector<fs::path> plot_records(const fs::path& dir, const std::vector<eval::MetricsRecord>& records) {
  std::vector<channel::Rational> crs;
  for (const auto& r : records)
    if (std::find(crs.begin(), crs.end(), r.cr) == crs.end()) crs.push_back(r.cr);

  struct Metric {
    const char* key;
    const char* label;
    double eval::MetricsRecord::*field;
  };
  static const Metric kMetrics[] = {{"psnr", "PSNR (dB), higher is better", &eval::MetricsRecord::psnr_db},
                                    {"lpips", "LPIPS, lower is better", &eval::MetricsRecord::lpips},
                                    {"fid", "FID, lower is better", &eval::MetricsRecord::fid}};
  std::vector<fs::path> out;
  for (const auto& cr : crs) {
    for (const auto& m : kMetrics) {
      std::vector<Series> series;
      for (const auto& r : records) {
        if (!(r.cr == cr)) continue;
        auto it = std::find_if(series.begin(), series.end(), [&](const Series& s) { return s.label == r.system; });
        if (it == series.end()) it = series.insert(series.end(), Series{r.system, {}});
        it->points.emplace_back(r.snr_db, r.*m.field);
      }
      auto path = dir / (std::string(m.key) + "_cr" + cr_slug(cr) + ".png");
      plot_metric_vs_snr(path, std::string(m.key) + " vs SNR, CR = " + cr.str(), m.label, series);
      out.push_back(path);
    }
  }
  return out;
}

std::pair<int64_t, int64_t> GridLayout::image_origin(int64_t k) const {
  const int64_t r = k / cols, c = k % cols;
  return {pad + r * (label_height + tile_height + pad) + label_height, pad + c * (tile_width + pad)};
}

GridLayout export_visual_grid(const std::vector<std::pair<std::string, ImageBatch>>& images, const fs::path& path,
                              int64_t scale) {
  std::vector<std::pair<std::string, torch::Tensor>> tiles;
  for (const auto& [label, batch] : images) {
    const int64_t b = batch.batch();
    for (int64_t i = 0; i < b; ++i) {
      tiles.emplace_back(b == 1 ? label : label + " #" + std::to_string(i), batch.tensor()[i]);
    }
  }
  if (tiles.empty()) throw ArgumentError("visual grid needs at least one image");
  if (scale < 1) throw ArgumentError("visual grid scale must be positive");

  GridLayout layout;
  const auto n = static_cast<int64_t>(tiles.size());
  layout.cols = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  layout.rows = (n + layout.cols - 1) / layout.cols;
  layout.scale = scale;
  layout.pad = 4;
  layout.label_height = 18;
  for (const auto& [label, t] : tiles) {
    layout.tile_height = std::max(layout.tile_height, t.size(1) * scale);
    layout.tile_width = std::max(layout.tile_width, t.size(2) * scale);
  }
  const int64_t width = std::max<int64_t>(layout.pad + layout.cols * (layout.tile_width + layout.pad), 1);
  const int64_t height = layout.pad + layout.rows * (layout.label_height + layout.tile_height + layout.pad);
  cv::Mat canvas(static_cast<int>(height), static_cast<int>(width), CV_8UC3, cv::Scalar(255, 255, 255));

  for (int64_t k = 0; k < n; ++k) {
    const auto& [label, t] = tiles[static_cast<size_t>(k)];
    auto bytes = t.detach().to(torch::kFloat32).clamp(-1.0, 1.0).contiguous();
    const auto* data = bytes.data_ptr<float>();
    const int64_t h = t.size(1), w = t.size(2), plane = h * w;
    auto [oy, ox] = layout.image_origin(k);
    for (int64_t y = 0; y < h * scale; ++y) {
      auto* row = canvas.ptr<cv::Vec3b>(static_cast<int>(oy + y));
      for (int64_t x = 0; x < w * scale; ++x) {
        const int64_t src = (y / scale) * w + x / scale;
        // OpenCV stores BGR.
        row[ox + x] = cv::Vec3b(data::unit_to_byte(data[2 * plane + src]), data::unit_to_byte(data[plane + src]),
                                data::unit_to_byte(data[src]));
      }
    }
    cv::putText(canvas, label, {static_cast<int>(ox), static_cast<int>(oy - 5)}, cv::FONT_HERSHEY_SIMPLEX, 0.4,
                cv::Scalar(0, 0, 0), 1, cv::LINE_AA);
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), canvas)) throw DataError("cannot write image grid " + path.string());
  return layout;
}

json manifest_json(const RunManifest& m) {
  json j;
  j["command"] = m.command;
  j["config"] = m.config;
  j["seeds"] = m.seeds;
  json ckpts = json::array();
  for (const auto& p : m.checkpoints) {
    ckpts.push_back({{"path", p.string()}, {"sha256", fs::exists(p) ? sha256_file(p) : "missing"}});
  }
  j["checkpoints"] = ckpts;
  j["source_tree_sha256"] = source_tree_hash();
  j["torch_version"] = TORCH_VERSION;
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream ts;
  ts << std::put_time(std::gmtime(&now), "%Y-%m-%dT%H:%M:%SZ");
  j["created_utc"] = ts.str();
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  return j;
}

void write_run_manifest(const fs::path& path, const RunManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << manifest_json(manifest).dump(2) << '\n';
}

}  // namespace casc::experiment
