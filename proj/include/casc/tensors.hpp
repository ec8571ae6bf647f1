#pragma once

// Strong wrappers for the tensors that flow through the transmit/receive chain.
// All image-like tensors use the NCHW layout expected by torch convolutions.

#include <cstdint>
#include <limits>
#include <utility>

#include <torch/torch.h>

#include "casc/errors.hpp"

namespace casc {

/// Batch of RGB images, B x 3 x H x W, values in [-1, 1].
class ImageBatch {
 public:
  ImageBatch() = default;
  explicit ImageBatch(torch::Tensor data);

  const torch::Tensor& tensor() const { return data_; }
  int64_t batch() const { return data_.size(0); }
  int64_t height() const { return data_.size(2); }
  int64_t width() const { return data_.size(3); }

 private:
  torch::Tensor data_;
};

/// Latent codes, B x c_lat x h x w.
class LatentCode {
 public:
  LatentCode() = default;
  explicit LatentCode(torch::Tensor data);

  const torch::Tensor& tensor() const { return data_; }
  int64_t batch() const { return data_.size(0); }
  int64_t channels() const { return data_.size(1); }
  int64_t height() const { return data_.size(2); }
  int64_t width() const { return data_.size(3); }

 private:
  torch::Tensor data_;
};

/// Per-sample real condition vectors, B x d.
class ConditionSignal {
 public:
  ConditionSignal() = default;
  explicit ConditionSignal(torch::Tensor data);

  const torch::Tensor& tensor() const { return data_; }
  int64_t batch() const { return data_.size(0); }
  int64_t length() const { return data_.size(1); }

 private:
  torch::Tensor data_;
};

/// Decibel value meaning "no channel noise".
inline constexpr double kNoiselessSnrDb = std::numeric_limits<double>::infinity();

/// SplitMix64 finalizer; derives independent stream seeds from (seed, index).
constexpr uint64_t mix_seed(uint64_t seed, uint64_t index) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Seeded CPU generator for reproducible draws.
at::Generator make_generator(uint64_t seed);

}  // namespace casc
