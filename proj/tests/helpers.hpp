#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "casc/cifar.hpp"
#include "casc/config.hpp"

namespace casc::test {

/// Small enough for a single CPU core, same topology as the defaults.
inline CascConfig tiny_config() {
  CascConfig cfg;
  cfg.codec.base_channels = 8;
  cfg.codec.codebook_size = 16;
  cfg.codec.perceptual_weight = 0.0;
  cfg.ldm.base_channels = 8;
  cfg.ldm.steps = 10;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 16;
  cfg.train.eval_images = 16;
  cfg.train.stage1_lr = 1e-3;
  cfg.train.stage2_lr = 1e-3;
  return cfg;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("casc_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline data::Dataset tiny_dataset(int64_t n, uint64_t seed = 3) { return data::make_synthetic_dataset(n, seed); }

}  // namespace casc::test
