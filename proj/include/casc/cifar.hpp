#pragma once

// CIFAR-10 binary batches: 3073-byte records of one label byte followed by
// 1024-byte R, G and B planes of a 32x32 image.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "casc/tensors.hpp"

namespace casc::data {

inline constexpr int64_t kImageSide = 32;
inline constexpr int64_t kImageBytes = 3 * kImageSide * kImageSide;
inline constexpr int64_t kRecordBytes = kImageBytes + 1;
inline constexpr int64_t kRecordsPerBatch = 10000;

struct Dataset {
  torch::Tensor images;          // N x 3 x 32 x 32 float in [-1, 1]
  std::vector<uint8_t> labels;

  int64_t size() const { return images.defined() ? images.size(0) : 0; }
  Dataset slice(int64_t begin, int64_t end) const;
  ImageBatch batch(const torch::Tensor& indices) const;
  static Dataset concat(const std::vector<Dataset>& parts);
};

struct CifarSplit {
  Dataset train;
  Dataset test;
};

/// Byte -> [-1, 1]: 0 -> -1, 255 -> +1.
inline float byte_to_unit(uint8_t b) { return static_cast<float>(b) / 127.5f - 1.0f; }
uint8_t unit_to_byte(float v);

/// Parses one batch file. Throws FormatError naming the file when the size is not a
/// positive multiple of 3073 bytes or differs from `expected_records` records.
Dataset read_cifar_batch(const std::filesystem::path& path,
                         std::optional<int64_t> expected_records = kRecordsPerBatch);

/// Reads data_batch_1..5.bin and test_batch.bin from `dir`, 10,000 records each.
CifarSplit ingest_cifar10(const std::filesystem::path& dir);

/// Any directory of CIFAR-format batches: data_batch_*.bin form the training split and
/// test_batch.bin the test split; record counts are not required to be 10,000.
CifarSplit load_cifar_format(const std::filesystem::path& dir);

/// Re-encodes image `index` as its 3073-byte record.
std::array<uint8_t, kRecordBytes> serialize_record(const Dataset& dataset, int64_t index);
void write_cifar_batch(const std::filesystem::path& path, const Dataset& dataset);

/// Parses `path` and re-encodes every record; throws FormatError naming the first
/// record whose bytes differ from the file. Returns the record count.
int64_t verify_round_trip(const std::filesystem::path& path);

/// Procedural 32x32 images (gradients with overlaid shapes), already quantized to
/// bytes so they survive a CIFAR-format round trip. Label = shape family.
Dataset make_synthetic_dataset(int64_t count, uint64_t seed);

/// Writes a synthetic CIFAR-format directory (train batches + test batch).
void write_synthetic_cifar(const std::filesystem::path& dir, int64_t train_count,
                           int64_t test_count, uint64_t seed, int64_t train_batches = 1);

}  // namespace casc::data
