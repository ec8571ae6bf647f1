#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <opencv2/imgcodecs.hpp>

#include "casc/cifar.hpp"
#include "casc/deepjscc.hpp"
#include "casc/errors.hpp"
#include "casc/experiment.hpp"
#include "casc/hashing.hpp"
#include "helpers.hpp"

using namespace casc;
using channel::Rational;
namespace fs = std::filesystem;

namespace {

eval::MetricAssets fallback_assets() {
  eval::AssetOptions opt;
  opt.dir = test::scratch_dir("no_assets_exp");
  opt.allow_uncalibrated = true;
  return eval::load_metric_assets(opt);
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

fs::path write_casc_ckpt(const fs::path& dir) {
  pipeline::CascSystem system(test::tiny_config(), 0);
  auto path = dir / "casc.ckpt";
  system.full_checkpoint().save(path);
  return path;
}

fs::path write_baseline_ckpt(const fs::path& dir) {
  baseline::DeepJsccConfig cfg;
  cfg.width = 8;
  torch::manual_seed(1);
  baseline::DeepJscc model(cfg);
  auto path = dir / "deepjscc.ckpt";
  baseline::deepjscc_checkpoint(model).save(path);
  return path;
}

}  // namespace

TEST(LoadSystem, IdentifiesCheckpoints) {
  auto dir = test::scratch_dir("load_system");
  auto casc_path = write_casc_ckpt(dir);
  auto sys = experiment::load_system(casc_path);
  EXPECT_EQ(sys.name, "casc");
  EXPECT_EQ(sys.cr, Rational::make(1, 48));
  EXPECT_EQ(sys.ckpt_id.size(), 16u);
  EXPECT_EQ(experiment::load_system(casc_path, {std::nullopt, true}).name, "casc-no-can");
  EXPECT_EQ(experiment::load_system(write_baseline_ckpt(dir)).name, "deepjscc-mse");

  pipeline::CascSystem system(test::tiny_config(), 0);
  system.codec_checkpoint().save(dir / "stage1.ckpt");
  EXPECT_THROW(experiment::load_system(dir / "stage1.ckpt"), ConfigError);
}

TEST(RunExperiment, TwoCellGridCsvPlotsAndDeterminism) {
  auto dir = test::scratch_dir("experiment");
  experiment::ExperimentSpec spec;
  spec.grid = {{"casc", Rational::make(1, 48), 5.0}, {"deepjscc-mse", Rational::make(1, 48), 5.0}};
  spec.checkpoints = {{"casc@1/48", write_casc_ckpt(dir)}, {"deepjscc-mse@1/48", write_baseline_ckpt(dir)}};
  spec.out_dir = dir / "run1";
  spec.n_images = 4;
  spec.batch_size = 4;
  spec.steps = 3;
  auto assets = fallback_assets();
  auto test_set = test::tiny_dataset(4);
  auto r1 = experiment::run_experiment(spec, test_set, assets);
  auto rows = lines(r1.csv);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], eval::csv_header());
  ASSERT_EQ(r1.plots.size(), 3u);
  for (const auto& p : r1.plots) {
    EXPECT_TRUE(fs::exists(p));
    EXPECT_GT(fs::file_size(p), 0u);
    EXPECT_FALSE(cv::imread(p.string()).empty());
  }
  spec.out_dir = dir / "run2";
  auto r2 = experiment::run_experiment(spec, test_set, assets);
  EXPECT_EQ(lines(r2.csv), rows);
}

TEST(RunExperiment, UnresolvableCellFailsBeforeRunning) {
  auto dir = test::scratch_dir("experiment_missing");
  experiment::ExperimentSpec spec;
  spec.grid = {{"casc", Rational::make(1, 48), 5.0}, {"casc", Rational::make(1, 96), 5.0}};
  spec.checkpoints = {{"casc@1/48", write_casc_ckpt(dir)}};
  spec.out_dir = dir / "out";
  EXPECT_THROW(experiment::run_experiment(spec, test::tiny_dataset(2), fallback_assets()), ConfigError);
  EXPECT_FALSE(fs::exists(spec.out_dir / "results.csv"));
}

TEST(RunExperiment, CellFailureLeavesPartialResults) {
  auto dir = test::scratch_dir("experiment_fail");
  experiment::ExperimentSpec spec;
  spec.grid = {{"casc", Rational::make(1, 48), 5.0}};
  spec.checkpoints = {{"casc@1/48", write_casc_ckpt(dir)}};
  spec.out_dir = dir / "out";
  spec.n_images = 2;
  // 16 x 16 images cannot pass through a 32 x 32 codec.
  data::Dataset wrong{torch::zeros({2, 3, 16, 16}), {0, 0}};
  EXPECT_THROW(experiment::run_experiment(spec, wrong, fallback_assets()), ConfigError);
  EXPECT_EQ(lines(spec.out_dir / "results.csv").size(), 1u);
  std::ifstream in(spec.out_dir / "failure.json");
  auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("failed_cell").at("system"), "casc");
}

TEST(VisualGrid, LayoutRule) {
  auto dir = test::scratch_dir("visual");
  auto imgs = test::tiny_dataset(4).images;
  std::vector<std::pair<std::string, ImageBatch>> four;
  for (int64_t i = 0; i < 4; ++i) four.emplace_back("img" + std::to_string(i), ImageBatch(imgs.slice(0, i, i + 1)));
  auto l4 = experiment::export_visual_grid(four, dir / "four.png");
  EXPECT_EQ(l4.rows, 2);
  EXPECT_EQ(l4.cols, 2);
  auto l1 = experiment::export_visual_grid({four[0]}, dir / "one.png");
  EXPECT_EQ(l1.rows, 1);
  EXPECT_EQ(l1.cols, 1);
  auto l5 = experiment::export_visual_grid({{"batch", ImageBatch(test::tiny_dataset(5).images)}}, dir / "five.png");
  EXPECT_EQ(l5.rows, 2);
  EXPECT_EQ(l5.cols, 3);
  EXPECT_THROW(experiment::export_visual_grid({}, dir / "none.png"), ArgumentError);
}

TEST(VisualGrid, PixelsMatchClampedInputs) {
  auto dir = test::scratch_dir("visual_pixels");
  auto gen = make_generator(3);
  auto a = torch::rand({1, 3, 32, 32}, gen) * 2.4 - 1.2;  // includes out-of-range values
  auto b = torch::rand({1, 3, 32, 32}, gen) * 2 - 1;
  auto layout = experiment::export_visual_grid({{"a", ImageBatch(a)}, {"b", ImageBatch(b)}}, dir / "g.png", 2);
  auto img = cv::imread((dir / "g.png").string(), cv::IMREAD_COLOR);
  ASSERT_FALSE(img.empty());
  for (int64_t k = 0; k < 2; ++k) {
    auto src = (k == 0 ? a : b).clamp(-1, 1);
    auto [oy, ox] = layout.image_origin(k);
    for (int64_t y = 0; y < 64; y += 3)
      for (int64_t x = 0; x < 64; x += 5) {
        auto px = img.at<cv::Vec3b>(static_cast<int>(oy + y), static_cast<int>(ox + x));
        for (int ch = 0; ch < 3; ++ch) {
          const auto expected = data::unit_to_byte(src[0][ch][y / 2][x / 2].item<float>());
          ASSERT_EQ(px[2 - ch], expected) << k << " " << y << " " << x << " " << ch;
        }
      }
  }
}

TEST(RunManifest, RecordsHashesAndConfig) {
  auto dir = test::scratch_dir("manifest");
  auto ckpt = write_casc_ckpt(dir);
  experiment::RunManifest m{"evaluate", to_json(test::tiny_config()), {{"seed", 7}}, {ckpt}, {{"note", 1}}};
  experiment::write_run_manifest(dir / "manifest.json", m);
  std::ifstream in(dir / "manifest.json");
  auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("seeds").at("seed"), 7);
  EXPECT_EQ(j.at("checkpoints")[0].at("sha256"), sha256_file(ckpt));
  EXPECT_EQ(j.at("source_tree_sha256").get<std::string>().size(), 64u);
  EXPECT_EQ(j.at("config"), to_json(test::tiny_config()));
  EXPECT_EQ(j.at("note"), 1);
}
