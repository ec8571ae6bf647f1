#pragma once

// Experiment orchestration: checkpoint resolution, grid evaluation, results CSV,
// metric-vs-SNR plots, labelled image grids, and run manifests.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/evaluate.hpp"

namespace casc::experiment {

namespace fs = std::filesystem;

/// A loaded system ready to transmit images.
struct LoadedSystem {
  std::string name;  // casc, casc-no-can, deepjscc-mse, deepjscc-lpips
  channel::Rational cr;
  eval::TransmitFn transmit;
  std::string ckpt_id;  // leading 16 hex digits of the checkpoint file's SHA-256
  std::shared_ptr<void> owner;
};

struct LoadOptions {
  std::optional<int64_t> steps;  // respaced sampler length for CASC
  bool no_can = false;
};

LoadedSystem load_system(const fs::path& ckpt_path, const LoadOptions& options = {});

struct ExperimentCell {
  std::string system;
  channel::Rational cr;
  double snr_db = 0.0;
};

struct ExperimentSpec {
  std::string name = "experiment";
  std::vector<ExperimentCell> grid;
  /// Checkpoint per (system, cr), keyed by checkpoint_key().
  std::map<std::string, fs::path> checkpoints;
  fs::path out_dir;
  uint64_t seed = 0;
  int64_t n_images = 256;
  int64_t batch_size = 64;
  std::optional<int64_t> steps;
};

/// "system@cr", e.g. "casc@1/48".
std::string checkpoint_key(const std::string& system, const channel::Rational& cr);

/// The full SNR x CR grid for each system.
std::vector<ExperimentCell> full_grid(const std::vector<std::string>& systems,
                                      const std::vector<channel::Rational>& crs,
                                      const std::vector<double>& snr_grid_db);

struct ExperimentResult {
  std::vector<eval::MetricsRecord> records;  // grid order
  fs::path csv;
  std::vector<fs::path> plots;
};

/// Resolves and loads every checkpoint before evaluating any cell (ConfigError
/// otherwise), then writes results.csv and three plots per CR into out_dir. A failing
/// cell leaves results.csv with the finished rows plus failure.json and rethrows.
ExperimentResult run_experiment(const ExperimentSpec& spec, const data::Dataset& test,
                                const eval::MetricAssets& assets);

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (snr_db, value)
};

/// Line plot of metric values against SNR, PNG.
void plot_metric_vs_snr(const fs::path& path, const std::string& title, const std::string& y_label,
                        const std::vector<Series>& series);

/// Writes psnr/lpips/fid plots for every CR in `records`; returns the paths.
std::vector<fs::path> plot_records(const fs::path& dir, const std::vector<eval::MetricsRecord>& records);

struct GridLayout {
  int64_t rows = 0;
  int64_t cols = 0;
  int64_t tile_height = 0;  // image height * scale
  int64_t tile_width = 0;
  int64_t label_height = 0;
  int64_t pad = 0;
  int64_t scale = 1;

  /// Top-left pixel of image k inside the written file.
  std::pair<int64_t, int64_t> image_origin(int64_t k) const;  // (row, col)
};

/// Tiles every image of every entry into a ceil(sqrt(n))-column grid with a text
/// label above each tile. Pixels map [-1, 1] -> [0, 255] after clamping; each image
/// pixel becomes a scale x scale block. PNG output. ArgumentError on an empty list.
GridLayout export_visual_grid(const std::vector<std::pair<std::string, ImageBatch>>& images, const fs::path& path,
                              int64_t scale = 4);

struct RunManifest {
  std::string command;
  nlohmann::json config = nlohmann::json::object();
  std::map<std::string, uint64_t> seeds;
  std::vector<fs::path> checkpoints;
  nlohmann::json extra = nlohmann::json::object();
};

/// JSON with the config snapshot, seeds, checkpoint hashes, and the source tree hash.
nlohmann::json manifest_json(const RunManifest& manifest);
void write_run_manifest(const fs::path& path, const RunManifest& manifest);

}  // namespace casc::experiment
